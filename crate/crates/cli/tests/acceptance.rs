//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//! The training-heavy criteria share one run: the "full" ablation model is the
//! default model on the 7:3 split and is reused for the SNR and room sweeps and
//! as the k-fold reference.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sonohazard::beamform::{delay_and_sum, pixel_to_steering, BeamWeights, CameraModel};
use sonohazard::config::ExperimentConfig;
use sonohazard::dsp::power;
use sonohazard::eval::{
    ablate, aggregate_interval, kfold_run, plan_corpus, sweep_room, sweep_snr, time_inference, AblationResult,
    ClipMeta, Renderer,
};
use sonohazard::nn::{xent_loss, ClassProbs, InceptionConfig, Model, Tensor4, Trainer};
use sonohazard::scene::{add_noise_at_snr, make_array, propagate, MultichannelRecording, NoiseKind};
use sonohazard::synth::{generate, ClassLabel, SourceSpec};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

struct Suite {
    failures: usize,
}

impl Suite {
    fn report(&mut self, n: usize, name: &str, started: Instant, o: Outcome) {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        if !o.pass {
            self.failures += 1;
        }
        println!("[{tag}] C{n:<2} {name}: {} ({:.1} s)", o.detail, started.elapsed().as_secs_f64());
    }
}

/// Settings for the training-heavy criteria: the default experiment with a 2 s
/// evaluation excerpt per test clip and a shorter early-stopping schedule.
fn experiment() -> ExperimentConfig {
    let overrides = ["protocol.eval_excerpt_s=2", "train.patience=5", "train.max_epochs=30"].map(String::from);
    ExperimentConfig::from_toml_with_overrides("", &overrides).unwrap()
}

// ---------------------------------------------------------------- C1

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Layer type of a parameter: `block1.path2.conv.weight` -> `conv`.
fn layer_type(name: &str) -> String {
    let parts: Vec<&str> = name.split('.').collect();
    match parts.as_slice() {
        ["mlp", layer, _] => format!("dense.{layer}"),
        [.., layer, _] => layer.to_string(),
        _ => name.to_string(),
    }
}

fn gradient_check() -> Outcome {
    // A small input keeps few ReLU and pooling boundaries within reach of a
    // finite-difference step; the net still has over 2000 parameters.
    let cfg = InceptionConfig { input_height: 8, input_width: 6, ..InceptionConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut model = Model::<f64>::new(cfg.clone(), 5).unwrap();
    for v in model.params.values.iter_mut() {
        *v += rng.random_range(-0.1..0.1);
    }
    let shape = [4, cfg.input_height, cfg.input_width, 1];
    let x = Tensor4::new(shape, (0..shape.iter().product()).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    let labels = [0, 1, 3, 4];
    let loss = |model: &mut Model<f64>| {
        let mut tr = Trainer::default();
        let p = model.forward_train(&mut tr, &x).unwrap();
        labels.iter().enumerate().map(|(i, &l)| xent_loss(l, &p[i * 5..(i + 1) * 5])).sum::<f64>() / 4.0
    };
    let mut tr = Trainer::default();
    model.forward_train(&mut tr, &x).unwrap();
    model.backward(&mut tr, &labels).unwrap();
    let analytic = model.params.grads.clone();

    let n = model.params.len();
    let owner: Vec<String> = {
        let mut o = vec![String::new(); n];
        for e in &model.params.entries {
            o[e.offset..e.offset + e.len()].fill(layer_type(&e.name));
        }
        o
    };
    let picks = sample(&mut rng, n, 1000.min(n));
    let mut worst: BTreeMap<String, (usize, f64)> = BTreeMap::new();
    let mut kinks = 0;
    let h = 1e-5;
    for i in picks.iter() {
        let orig = model.params.values[i];
        let mut at = |dx: f64| {
            model.params.values[i] = orig + dx;
            let l = loss(&mut model);
            model.params.values[i] = orig;
            l
        };
        let (l0, lp, lm) = (at(0.0), at(h), at(-h));
        let (fwd, bwd) = ((lp - l0) / h, (l0 - lm) / h);
        let mut numeric = (lp - lm) / (2.0 * h);
        // A ReLU or pooling boundary inside the step makes the one-sided
        // differences disagree. The derivative is then taken from a
        // second-order one-sided formula on the side that stays smooth, judged
        // by agreement between steps h and h/2.
        if (fwd - bwd).abs() > 1e-3 * fwd.abs().max(bwd.abs()).max(1e-4) {
            kinks += 1;
            let mut one_sided = |s: f64, h: f64| (-3.0 * l0 + 4.0 * at(s * h) - at(s * 2.0 * h)) / (2.0 * h) * s;
            let sides: Vec<(f64, f64)> = [1.0, -1.0]
                .into_iter()
                .map(|s| {
                    let (a, b) = (one_sided(s, h), one_sided(s, h / 2.0));
                    ((a - b).abs(), b)
                })
                .collect();
            numeric = if sides[0].0 <= sides[1].0 { sides[0].1 } else { sides[1].1 };
        }
        let e = rel_err(analytic[i], numeric);
        let w = worst.entry(owner[i].clone()).or_insert((0, 0.0));
        w.0 += 1;
        w.1 = w.1.max(e);
    }
    let overall = worst.values().map(|w| w.1).fold(0.0, f64::max);
    let by_layer: Vec<String> = worst.iter().map(|(k, (c, e))| format!("{k} {c}:{e:.1e}")).collect();
    outcome(
        overall < 1e-4 && picks.len() >= 1000,
        format!(
            "{} of {n} parameters, worst rel err {overall:.2e} < 1e-4, {kinks} kinks handled one-sided [{}]",
            picks.len(),
            by_layer.join(", ")
        ),
    )
}

// ---------------------------------------------------------------- C2

fn array_gain() -> Outcome {
    let g = make_array("fx112", 112).unwrap();
    let s = generate(&SourceSpec { duration_s: 0.5, ..SourceSpec::new(ClassLabel::GasLeak, 21) }).unwrap();
    let clean = propagate(&s, [0.0, 0.0, 5.0], &g, None).unwrap();
    let noisy = add_noise_at_snr(&clean, 0.0, NoiseKind::Gaussian, 77).unwrap();
    let channels = noisy.channels.iter().zip(&clean.channels).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect());
    let noise = MultichannelRecording::new(channels.collect(), clean.sample_rate_hz, g.clone(), ClassLabel::GasLeak).unwrap();
    let dir = pixel_to_steering(320.0, 240.0, &CameraModel::default()).unwrap();
    let w = BeamWeights::uniform(112);
    let ys = delay_and_sum(&clean, &dir, &w).unwrap();
    let yn = delay_and_sum(&noise, &dir, &w).unwrap();
    let in_snr: f64 = {
        let ps: f64 = clean.channels.iter().map(|c| power(c)).sum();
        let pn: f64 = noise.channels.iter().map(|c| power(c)).sum();
        10.0 * (ps / pn).log10()
    };
    let out_snr = 10.0 * (power(&ys.samples) / power(&yn.samples)).log10();
    let gain = out_snr - in_snr;
    outcome(gain >= 15.0, format!("input {in_snr:.2} dB, output {out_snr:.2} dB, gain {gain:.2} dB >= 15 (theory {:.2})", 10.0 * 112f64.log10()))
}

// ---------------------------------------------------------------- C7

fn aggregation_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n_intervals = 250;
    let probs: Vec<ClassProbs> = (0..10_000)
        .map(|_| {
            let raw: [f64; 5] = std::array::from_fn(|_| rng.random::<f64>() + 1e-3);
            let s: f64 = raw.iter().sum();
            ClassProbs::new(raw.map(|v| v / s)).unwrap()
        })
        .collect();
    let assign: Vec<usize> = (0..10_000).map(|_| rng.random_range(0..n_intervals)).collect();
    let mut groups: BTreeMap<usize, Vec<[f64; 5]>> = BTreeMap::new();
    for (p, &a) in probs.iter().zip(&assign) {
        groups.entry(a).or_default().push(p.0);
    }
    let oracle: BTreeMap<usize, [f64; 5]> = groups
        .into_iter()
        .map(|(k, rows)| {
            let mut m = [0.0; 5];
            for r in &rows {
                for c in 0..5 {
                    m[c] += r[c];
                }
            }
            (k, m.map(|v| v / rows.len() as f64))
        })
        .collect();
    let track = aggregate_interval(&probs, &assign).unwrap();
    let mismatched = track.predictions.iter().filter(|p| oracle.get(&p.interval_index) != Some(&p.probs.0)).count();
    let pass = mismatched == 0 && track.predictions.len() == oracle.len();
    outcome(pass, format!("{} intervals, {mismatched} differ from group-by-mean (exact comparison)", oracle.len()))
}

// ---------------------------------------------------------------- C9

fn efficiency(cfg: &ExperimentConfig, model: &Model<f32>) -> Outcome {
    let metas = plan_corpus(cfg);
    let signal = Renderer::new(cfg).unwrap().clean(&metas[0], None).unwrap().at_snr(cfg.corpus.snr_db).unwrap();
    let t = time_inference(model, &cfg.features, &signal, 3).unwrap();
    let params = model.param_count();
    let pass = (18_000..=23_000).contains(&params) && t.windows == 935 && t.median_s < 10.0;
    outcome(pass, format!("{params} parameters in [18000, 23000]; {} windows in {:.3} s < 10 s", t.windows, t.median_s))
}

// ---------------------------------------------------------------- C10

const TINY: &str = r#"
[corpus]
clips_per_class = 10
duration_s = 0.5

[protocol]
windows_per_clip = 4
kfold_k = 2
timing_runs = 1

[train]
max_epochs = 2
patience = 2

[sweeps]
rooms = [{ size = [20.0, 10.0, 20.0] }]
room_image_order = 1
"#;

const SUBCOMMANDS: [&str; 11] =
    ["synth", "render", "beamform", "features", "train", "eval", "kfold", "sweep-snr", "sweep-room", "ablate", "time"];

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = vec![];
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();
    let roots = [dir.path().join("a"), dir.path().join("b")];
    for root in &roots {
        for cmd in SUBCOMMANDS {
            let o = Command::new(env!("CARGO_BIN_EXE_sonohazard")).arg(cmd).arg(&cfg).arg("--out").arg(root).output();
            let o = o.unwrap();
            if !o.status.success() {
                return outcome(false, format!("{cmd} failed: {}", String::from_utf8_lossy(&o.stderr)));
            }
        }
    }
    let (fa, fb) = (files(&roots[0]), files(&roots[1]));
    if fa != fb {
        return outcome(false, "runs produced different file sets");
    }
    // Wall-clock timings are the only intentionally variable output.
    let compared: Vec<&PathBuf> = fa.iter().filter(|p| !p.starts_with("time")).collect();
    let differing: Vec<String> = compared
        .iter()
        .filter(|p| fs::read(roots[0].join(p)).unwrap() != fs::read(roots[1].join(p)).unwrap())
        .map(|p| p.display().to_string())
        .collect();
    let csv = compared.iter().filter(|p| p.extension().is_some_and(|x| x == "csv")).count();
    let weights = compared.iter().filter(|p| p.extension().is_some_and(|x| x == "bin")).count();
    outcome(
        differing.is_empty() && weights > 0,
        format!(
            "{} subcommands, {} files ({csv} CSV, {weights} weight) byte-identical; differing: [{}]",
            SUBCOMMANDS.len(),
            compared.len(),
            differing.join(", ")
        ),
    )
}

// ---------------------------------------------------------------- C3-C6, C8

fn end_to_end(full: &AblationResult) -> Outcome {
    let e = &full.eval;
    outcome(
        e.interval.accuracy >= 0.95,
        format!(
            "{} test clips, interval accuracy {:.4} >= 0.95 (macro F1 {:.4}, clip accuracy {:.4}, best epoch {})",
            e.clips.len(),
            e.interval.accuracy,
            e.interval.macro_f1,
            e.clip.accuracy,
            full.trained.history.best_epoch
        ),
    )
}

fn snr_trend(cfg: &ExperimentConfig, model: &Model<f32>, test: &[ClipMeta]) -> Outcome {
    let mut rows: Vec<(f64, f64)> =
        sweep_snr(cfg, model, test).unwrap().into_iter().map(|(s, e)| (s, e.interval.macro_f1)).collect();
    rows.sort_by(|a, b| b.0.total_cmp(&a.0));
    let rows: Vec<(f64, f64)> = rows.into_iter().filter(|(s, _)| (-3.0..=5.0).contains(s)).collect();
    let rises: Vec<f64> = rows.windows(2).map(|w| w[1].1 - w[0].1).filter(|d| *d > 0.0).collect();
    let drop = rows.first().unwrap().1 - rows.last().unwrap().1;
    let pass = rises.len() <= 1 && rises.iter().all(|d| *d <= 0.03) && drop >= 0.4;
    let curve: Vec<String> = rows.iter().map(|(s, f)| format!("{s:+}:{f:.3}")).collect();
    outcome(pass, format!("F1 [{}]; inversions {rises:?}; drop {drop:.3} >= 0.4", curve.join(" ")))
}

fn room_trend(cfg: &ExperimentConfig, model: &Model<f32>, test: &[ClipMeta]) -> Outcome {
    let rows: BTreeMap<String, f64> =
        sweep_room(cfg, model, test).unwrap().into_iter().map(|(c, e)| (c.name, e.interval.macro_f1)).collect();
    let f = |k: &str| rows[k];
    let small_vs_large = f("20x10x20") <= f("50x25x50") + 0.03;
    let control = (f("20x10x20-absorbing") - f("anechoic")).abs() <= 0.01;
    let all: Vec<String> = rows.iter().map(|(k, v)| format!("{k}:{v:.3}")).collect();
    outcome(
        small_vs_large && control,
        format!(
            "F1 [{}]; 20x10x20 <= 50x25x50 + 0.03: {small_vs_large}; absorbing control within 0.01 of anechoic: {control}",
            all.join(" ")
        ),
    )
}

fn ablation_order(rows: &[AblationResult]) -> Outcome {
    let f1: Vec<f64> = rows.iter().map(|r| r.eval.interval.macro_f1).collect();
    let pass = f1.windows(2).all(|w| w[0] >= w[1] - 0.02);
    let all: Vec<String> =
        rows.iter().map(|r| format!("{}:{:.3} ({} params)", r.case.name, r.eval.interval.macro_f1, r.param_count)).collect();
    outcome(pass, format!("F1 [{}], each >= next - 0.02", all.join(" ")))
}

fn kfold_check(cfg: &ExperimentConfig, reference_f1: f64) -> Outcome {
    let n = plan_corpus(cfg).len();
    let k = kfold_run(cfg).unwrap();
    let mut seen = vec![0usize; n];
    for f in &k.folds {
        for &i in &f.split.test {
            seen[i] += 1;
        }
        let test: std::collections::HashSet<_> = f.split.test.iter().collect();
        if f.split.train.iter().chain(&f.split.val).any(|i| test.contains(i)) {
            return outcome(false, format!("fold {} trains on its own test clips", f.fold));
        }
    }
    let partition = k.folds.len() == 10 && seen.iter().all(|&c| c == 1);
    let close = (k.mean_f1 - reference_f1).abs() <= 0.05;
    outcome(
        partition && close,
        format!(
            "{} folds partition {n} clips: {partition}; mean F1 {:.4} vs 7:3 F1 {reference_f1:.4} (within 0.05: {close}); spread {:.4}-{:.4}, std {:.4}",
            k.folds.len(),
            k.mean_f1,
            k.min_f1,
            k.max_f1,
            k.std_f1
        ),
    )
}

fn main() -> ExitCode {
    let mut suite = Suite { failures: 0 };
    let cfg = experiment();

    let t = Instant::now();
    suite.report(1, "gradient correctness", t, gradient_check());
    let t = Instant::now();
    suite.report(2, "beamforming array gain", t, array_gain());
    let t = Instant::now();
    suite.report(7, "interval aggregation oracle", t, aggregation_oracle());
    let t = Instant::now();
    let untrained = Model::<f32>::new(cfg.model.clone(), cfg.protocol.model_seed).unwrap();
    suite.report(9, "efficiency envelope", t, efficiency(&cfg, &untrained));
    let t = Instant::now();
    suite.report(10, "determinism", t, determinism());

    let t = Instant::now();
    let rows = ablate(&cfg).unwrap();
    let full = &rows[0];
    suite.report(3, "end-to-end classification", t, end_to_end(full));
    suite.report(6, "ablation ordering", t, ablation_order(&rows));

    let metas = plan_corpus(&cfg);
    let test: Vec<ClipMeta> = full.eval.clips.iter().map(|c| metas.iter().find(|m| m.id == c.id).unwrap().clone()).collect();
    let model = &full.trained.model;
    let t = Instant::now();
    suite.report(4, "SNR degradation trend", t, snr_trend(&cfg, model, &test));
    let t = Instant::now();
    suite.report(5, "reverberation trend", t, room_trend(&cfg, model, &test));
    let t = Instant::now();
    suite.report(8, "k-fold harness", t, kfold_check(&cfg, full.eval.interval.macro_f1));

    println!("acceptance: {} of 10 criteria passed", 10 - suite.failures);
    if suite.failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
