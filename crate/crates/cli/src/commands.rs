use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sonohazard::beamform::{delay_and_sum, parse_detections, pixel_to_steering, BeamWeights};
use sonohazard::config::{ExperimentConfig, NoiseStage};
use sonohazard::eval::{
    ablate, ablation_csv, clip_ids, confusion_csv, corpus_split, evaluate, fit, id_set_hash, kfold_csv,
    kfold_run, kfold_summary_csv, metrics_csv, mix_at_snr, plan_corpus, predictions_csv, prepare_corpus,
    room_csv, snr_csv, split_roles, sweep_room, sweep_snr, time_inference, timing_csv, ClipMeta, Renderer,
    RunManifest, Split,
};
use sonohazard::features::{slide, write_spectrogram, write_windows};
use sonohazard::nn::{encode_weights, load_weights, Model};
use sonohazard::scene::{add_noise_at_snr, make_array, noise_with_power, propagate, MultichannelRecording, RoomSpec, Vec3};
use sonohazard::synth::{generate, ClassLabel, MonoSignal};
use sonohazard::wav::{read_wav, write_wav};
use sonohazard::{Error, Result};

/// Output directory of one subcommand plus the manifest being assembled.
struct Run {
    dir: PathBuf,
    manifest: RunManifest,
}

impl Run {
    fn new(out: &Path, name: &str, cfg: &ExperimentConfig) -> Result<Self> {
        let dir = out.join(name);
        fs::create_dir_all(&dir)?;
        Ok(Self { dir, manifest: RunManifest::new(name, cfg) })
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        fs::write(self.path(rel), bytes)?;
        self.record(rel)
    }

    /// Hashes a file already written under the run directory.
    fn record(&mut self, rel: &str) -> Result<()> {
        let bytes = fs::read(self.path(rel))?;
        self.manifest.artifacts.insert(rel.to_string(), hex::encode(Sha256::digest(&bytes)));
        Ok(())
    }

    fn dataset(&mut self, name: &str, ids: &[String]) {
        self.manifest.datasets.insert(name.to_string(), id_set_hash(ids));
    }

    fn finish(self) -> Result<()> {
        fs::write(self.dir.join("manifest.json"), self.manifest.to_json())?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct RenderSidecar {
    clip: ClipMeta,
    array_preset: String,
    n_mics: usize,
    source_position: Vec3,
    room: Option<RoomSpec>,
    noise_stage: NoiseStage,
    /// Per-channel SNR when noise was added at the microphones.
    channel_snr_db: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct BeamSidecar {
    clip: ClipMeta,
    output: String,
    detection_px: [f64; 2],
    detection_class: Option<String>,
    steering: Vec3,
    /// SNR of the beamformer output when noise was added after beamforming.
    output_snr_db: Option<f64>,
}

pub fn run(name: &str, cfg: &ExperimentConfig, out: &Path, detections: Option<&Path>) -> Result<String> {
    match name {
        "synth" => synth(cfg, out),
        "render" => render(cfg, out),
        "beamform" => beamform(cfg, out, detections),
        "features" => features(cfg, out),
        "train" => train(cfg, out),
        "eval" => eval(cfg, out),
        "kfold" => kfold(cfg, out),
        "sweep-snr" => sweep(cfg, out, true),
        "sweep-room" => sweep(cfg, out, false),
        "ablate" => ablation(cfg, out),
        "time" => time(cfg, out),
        other => Err(Error::InvalidParameter(format!("unknown subcommand {other}"))),
    }
}

fn json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("sidecar serializes");
    s.push('\n');
    s.into_bytes()
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Sidecars (`*.json` except the manifest) of a previous stage, sorted by name.
fn stage_inputs(out: &Path, stage: &str, next: &str) -> Result<Vec<PathBuf>> {
    let dir = out.join(stage);
    let entries = fs::read_dir(&dir)
        .map_err(|_| Error::Data(format!("{} not found; run `{stage}` before `{next}`", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json") && p.file_stem().is_some_and(|s| s != "manifest"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Data(format!("{} holds no clips; run `{stage}` first", dir.display())));
    }
    Ok(paths)
}

fn mono_from_wav(path: &Path, label: ClassLabel) -> Result<MonoSignal> {
    let w = read_wav(path)?;
    if w.channels.len() != 1 {
        return Err(Error::Data(format!("{} has {} channels, expected 1", path.display(), w.channels.len())));
    }
    MonoSignal::new(w.channels[0].iter().map(|&v| v as f64).collect(), w.sample_rate_hz, label)
}

fn synth(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let mut run = Run::new(out, "synth", cfg)?;
    let metas = plan_corpus(cfg);
    let mut index = String::from("clip,class,seed\n");
    for m in &metas {
        let s = generate(&m.source)?;
        let wav = format!("{}.wav", m.id);
        write_wav(&run.path(&wav), s.sample_rate_hz, &[s.samples])?;
        run.record(&wav)?;
        run.write(&format!("{}.json", m.id), &json(m))?;
        index.push_str(&format!("{},{},{}\n", m.id, m.class.name(), m.source.seed));
    }
    run.write("clips.csv", index.as_bytes())?;
    run.dataset("clips", &clip_ids(&metas));
    run.finish()?;
    Ok(format!("synth: {} clips in {}", metas.len(), run_dir(out, "synth")))
}

fn run_dir(out: &Path, name: &str) -> String {
    out.join(name).display().to_string()
}

fn render(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let inputs = stage_inputs(out, "synth", "render")?;
    let mut run = Run::new(out, "render", cfg)?;
    let sc = &cfg.scene;
    let mut geometry = make_array(&sc.array_preset, sc.n_mics)?;
    geometry.speed_of_sound = sc.speed_of_sound;
    let channel_noise = cfg.corpus.noise_stage == NoiseStage::Channel;
    for sidecar in &inputs {
        let meta: ClipMeta = read_json(sidecar)?;
        let source = mono_from_wav(&sidecar.with_extension("wav"), meta.class)?;
        let mut rec = propagate(&source, sc.source_position, &geometry, sc.room.as_ref())?;
        if channel_noise {
            rec = add_noise_at_snr(&rec, cfg.corpus.snr_db, cfg.corpus.noise_kind, meta.noise_seed)?;
        }
        let wav = format!("{}.wav", meta.id);
        write_wav(&run.path(&wav), rec.sample_rate_hz, &rec.channels)?;
        run.record(&wav)?;
        let side = RenderSidecar {
            array_preset: sc.array_preset.clone(),
            n_mics: sc.n_mics,
            source_position: sc.source_position,
            room: sc.room.clone(),
            noise_stage: cfg.corpus.noise_stage,
            channel_snr_db: channel_noise.then_some(cfg.corpus.snr_db),
            clip: meta,
        };
        run.write(&format!("{}.json", side.clip.id), &json(&side))?;
    }
    run.finish()?;
    Ok(format!("render: {} recordings of {} channels", inputs.len(), sc.n_mics))
}

fn beamform(cfg: &ExperimentConfig, out: &Path, detections: Option<&Path>) -> Result<String> {
    let inputs = stage_inputs(out, "render", "beamform")?;
    let targets: Vec<([f64; 2], Option<String>)> = match detections {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Error::Data(format!("cannot read detections {}: {e}", p.display())))?;
            let d = parse_detections(&text)?;
            if d.is_empty() {
                return Err(Error::Data(format!("{} lists no detections", p.display())));
            }
            d.into_iter().map(|d| ([d.px, d.py], Some(d.class_name))).collect()
        }
        None => vec![(cfg.scene.detection_px, None)],
    };
    let mut run = Run::new(out, "beamform", cfg)?;
    let sc = &cfg.scene;
    let mut geometry = make_array(&sc.array_preset, sc.n_mics)?;
    geometry.speed_of_sound = sc.speed_of_sound;
    let weights = BeamWeights::uniform(geometry.len());
    let post_noise = cfg.corpus.noise_stage == NoiseStage::Beamformed;
    let mut count = 0;
    for sidecar in &inputs {
        let side: RenderSidecar = read_json(sidecar)?;
        let w = read_wav(&sidecar.with_extension("wav"))?;
        let channels = w.channels.iter().map(|c| c.iter().map(|&v| v as f64).collect()).collect();
        let rec = MultichannelRecording::new(channels, w.sample_rate_hz, geometry.clone(), side.clip.class)?;
        for (k, (px, class)) in targets.iter().enumerate() {
            let dir = pixel_to_steering(px[0], px[1], &sc.camera)?;
            let mut y = delay_and_sum(&rec, &dir, &weights)?;
            if post_noise {
                let noise = noise_with_power(y.len(), 1.0, cfg.corpus.noise_kind, side.clip.noise_seed, 0);
                y = mix_at_snr(&y, &noise, cfg.corpus.snr_db)?;
            }
            let output = if targets.len() == 1 { side.clip.id.clone() } else { format!("{}-d{k}", side.clip.id) };
            let wav = format!("{output}.wav");
            write_wav(&run.path(&wav), y.sample_rate_hz, &[y.samples])?;
            run.record(&wav)?;
            let bs = BeamSidecar {
                clip: side.clip.clone(),
                output: output.clone(),
                detection_px: *px,
                detection_class: class.clone(),
                steering: dir.vector(),
                output_snr_db: post_noise.then_some(cfg.corpus.snr_db),
            };
            run.write(&format!("{output}.json"), &json(&bs))?;
            count += 1;
        }
    }
    run.finish()?;
    Ok(format!("beamform: {count} beamformed clips"))
}

fn features(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let inputs = stage_inputs(out, "beamform", "features")?;
    let mut run = Run::new(out, "features", cfg)?;
    let pl = &cfg.features;
    let mut index = String::from("clip,class,frames,band_bins,windows\n");
    for sidecar in &inputs {
        let side: BeamSidecar = read_json(sidecar)?;
        let signal = mono_from_wav(&sidecar.with_extension("wav"), side.clip.class)?;
        let spec = pl.spectrogram(&signal)?;
        let batch = slide(&spec, pl.win_frames, pl.hop_frames)?;
        let (sp, wp) = (format!("{}.spec", side.output), format!("{}.win", side.output));
        write_spectrogram(&run.path(&sp), &spec)?;
        write_windows(&run.path(&wp), &batch, &spec)?;
        run.record(&sp)?;
        run.record(&wp)?;
        index.push_str(&format!(
            "{},{},{},{},{}\n",
            side.output,
            side.clip.class.name(),
            spec.n_frames,
            spec.n_freq,
            batch.n_windows
        ));
    }
    run.write("features.csv", index.as_bytes())?;
    run.finish()?;
    Ok(format!("features: {} clips", inputs.len()))
}

fn split_csv(metas: &[ClipMeta], split: &Split) -> String {
    let mut role = vec![""; metas.len()];
    for (name, idx) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
        for &i in idx {
            role[i] = name;
        }
    }
    let mut s = String::from("clip,class,role\n");
    for (m, r) in metas.iter().zip(role) {
        s.push_str(&format!("{},{},{r}\n", m.id, m.class.name()));
    }
    s
}

fn record_split(run: &mut Run, metas: &[ClipMeta], split: &Split) {
    for (name, idx) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
        run.dataset(name, &clip_ids(idx.iter().map(|&i| &metas[i])));
    }
}

fn train(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let mut run = Run::new(out, "train", cfg)?;
    let metas = plan_corpus(cfg);
    let split = corpus_split(cfg, &metas)?;
    let (want_train, _) = split_roles(metas.len(), &split);
    let clips = prepare_corpus(cfg, &metas, &want_train, &vec![false; metas.len()])?;
    let trained = fit(cfg, &cfg.model, &clips, &split, cfg.features.gamma)?;
    run.write("weights.bin", &encode_weights(&trained.model))?;
    run.write("history.csv", trained.history.to_csv().as_bytes())?;
    run.write("split.csv", split_csv(&metas, &split).as_bytes())?;
    record_split(&mut run, &metas, &split);
    run.finish()?;
    Ok(format!(
        "train: {} parameters, best epoch {} (validation accuracy {:.4})",
        trained.model.param_count(),
        trained.history.best_epoch,
        trained.history.best_val_acc
    ))
}

fn trained_model(cfg: &ExperimentConfig, out: &Path) -> Result<Model<f32>> {
    let path = out.join("train").join("weights.bin");
    if !path.is_file() {
        return Err(Error::Data(format!("no trained weights at {}; run `train` first", path.display())));
    }
    let model: Model<f32> = load_weights(&path)?;
    if model.config != cfg.model {
        return Err(Error::Config(format!(
            "{} was trained with a different model configuration",
            path.display()
        )));
    }
    Ok(model)
}

fn test_clips(cfg: &ExperimentConfig) -> Result<(Vec<ClipMeta>, Split)> {
    let metas = plan_corpus(cfg);
    let split = corpus_split(cfg, &metas)?;
    Ok((metas, split))
}

fn eval(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let model = trained_model(cfg, out)?;
    let mut run = Run::new(out, "eval", cfg)?;
    let (metas, split) = test_clips(cfg)?;
    let (_, want_eval) = split_roles(metas.len(), &split);
    let clips = prepare_corpus(cfg, &metas, &vec![false; metas.len()], &want_eval)?;
    let e = evaluate(&model, &cfg.features, cfg.features.gamma, &clips, &split.test)?;
    run.write("metrics.csv", metrics_csv(&e.interval).as_bytes())?;
    run.write("confusion.csv", confusion_csv(&e.interval).as_bytes())?;
    run.write("clip_metrics.csv", metrics_csv(&e.clip).as_bytes())?;
    run.write("clip_confusion.csv", confusion_csv(&e.clip).as_bytes())?;
    run.write("predictions.csv", predictions_csv(&e).as_bytes())?;
    run.record_weights(out)?;
    record_split(&mut run, &metas, &split);
    run.finish()?;
    Ok(format!(
        "eval: interval accuracy {:.4}, macro F1 {:.4}; clip accuracy {:.4}",
        e.interval.accuracy, e.interval.macro_f1, e.clip.accuracy
    ))
}

impl Run {
    /// Ties a run that reads the trained model to the exact weights file.
    fn record_weights(&mut self, out: &Path) -> Result<()> {
        let bytes = fs::read(out.join("train").join("weights.bin"))?;
        self.manifest.datasets.insert("weights".into(), hex::encode(Sha256::digest(&bytes)));
        Ok(())
    }
}

fn kfold(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let mut run = Run::new(out, "kfold", cfg)?;
    let metas = plan_corpus(cfg);
    let k = kfold_run(cfg)?;
    let mut assign = vec![0usize; metas.len()];
    for r in &k.folds {
        for &i in &r.split.test {
            assign[i] = r.fold;
        }
        run.manifest.datasets.insert(format!("fold{}.train", r.fold), r.train_hash.clone());
        run.manifest.datasets.insert(format!("fold{}.test", r.fold), r.test_hash.clone());
    }
    let mut a = String::from("clip,class,fold\n");
    for (m, f) in metas.iter().zip(&assign) {
        a.push_str(&format!("{},{},{f}\n", m.id, m.class.name()));
    }
    run.write("folds.csv", kfold_csv(&k).as_bytes())?;
    run.write("summary.csv", kfold_summary_csv(&k).as_bytes())?;
    run.write("assignments.csv", a.as_bytes())?;
    run.finish()?;
    Ok(format!(
        "kfold: {} folds, mean F1 {:.4} (std {:.4}, range {:.4}-{:.4})",
        k.folds.len(),
        k.mean_f1,
        k.std_f1,
        k.min_f1,
        k.max_f1
    ))
}

fn sweep(cfg: &ExperimentConfig, out: &Path, snr: bool) -> Result<String> {
    let model = trained_model(cfg, out)?;
    let name = if snr { "sweep-snr" } else { "sweep-room" };
    let mut run = Run::new(out, name, cfg)?;
    let (metas, split) = test_clips(cfg)?;
    let test: Vec<ClipMeta> = split.test.iter().map(|&i| metas[i].clone()).collect();
    run.dataset("test", &clip_ids(&test));
    run.record_weights(out)?;
    let rows = if snr {
        let rows = sweep_snr(cfg, &model, &test)?;
        run.write("snr.csv", snr_csv(&rows).as_bytes())?;
        rows.len()
    } else {
        let rows = sweep_room(cfg, &model, &test)?;
        run.write("rooms.csv", room_csv(&rows).as_bytes())?;
        rows.len()
    };
    run.finish()?;
    Ok(format!("{name}: {rows} rows"))
}

fn ablation(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let mut run = Run::new(out, "ablate", cfg)?;
    let rows = ablate(cfg)?;
    for r in &rows {
        run.manifest.datasets.insert(format!("{}.train", r.case.name), r.trained.train_hash.clone());
        run.write(&format!("{}_metrics.csv", r.case.name), metrics_csv(&r.eval.interval).as_bytes())?;
    }
    run.write("ablation.csv", ablation_csv(&rows).as_bytes())?;
    run.finish()?;
    let f1: Vec<String> = rows.iter().map(|r| format!("{} {:.4}", r.case.name, r.eval.interval.macro_f1)).collect();
    Ok(format!("ablate: {}", f1.join(", ")))
}

fn time(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let model = trained_model(cfg, out)?;
    let mut run = Run::new(out, "time", cfg)?;
    let (metas, split) = test_clips(cfg)?;
    let meta = &metas[split.test[0]];
    let signal = Renderer::new(cfg)?.clean(meta, cfg.scene.room.as_ref())?.at_snr(cfg.corpus.snr_db)?;
    let t = time_inference(&model, &cfg.features, &signal, cfg.protocol.timing_runs)?;
    run.write("timing.csv", timing_csv(&t).as_bytes())?;
    run.dataset("clip", &[meta.id.clone()]);
    run.record_weights(out)?;
    run.finish()?;
    Ok(format!(
        "time: {} windows in {:.3} s (median of {}), {} parameters",
        t.windows,
        t.median_s,
        t.runs_s.len(),
        t.param_count
    ))
}
