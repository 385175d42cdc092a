use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use serde::Serialize;

use super::aggregate::{classify_spectrogram, ClipClassification};
use super::corpus::{
    excerpt_frames, normalized_spectrogram, plan_corpus, sample_windows, truncate_frames, ClipMeta, Renderer,
};
use super::kfold::{assert_disjoint, fold_split, id_set_hash, kfold_assign, stratified_split, Split};
use super::metrics::{metrics, MetricsReport};
use crate::config::ExperimentConfig;
use crate::error::{data, Result};
use crate::features::{FeaturePipeline, Spectrogram};
use crate::nn::{train, Dataset, InceptionConfig, Model, TrainHistory};
use crate::scene::RoomSpec;
use crate::synth::{ClassLabel, MonoSignal};

/// Pre-gamma features of one clip.
#[derive(Clone, Debug)]
pub struct ClipFeatures {
    pub meta: ClipMeta,
    /// Randomly placed training windows, concatenated.
    pub train_windows: Vec<f32>,
    /// Normalized spectrogram of the evaluated excerpt.
    pub eval_spec: Option<Spectrogram>,
}

fn clip_features(
    cfg: &ExperimentConfig,
    renderer: &Renderer,
    meta: &ClipMeta,
    want_train: bool,
    want_eval: bool,
) -> Result<ClipFeatures> {
    let signal = renderer.clean(meta, cfg.scene.room.as_ref())?.at_snr(cfg.corpus.snr_db)?;
    let spec = normalized_spectrogram(&signal, &cfg.features)?;
    let train_windows = if want_train {
        sample_windows(&spec, &cfg.features, cfg.protocol.windows_per_clip, meta.window_seed)?
    } else {
        vec![]
    };
    let eval_spec = want_eval.then(|| {
        let frames = excerpt_frames(&spec, &cfg.features, cfg.protocol.eval_excerpt_s);
        truncate_frames(&spec, frames)
    });
    Ok(ClipFeatures { meta: meta.clone(), train_windows, eval_spec })
}

/// Renders every clip at the corpus SNR and keeps the features each role
/// needs.
pub fn prepare_corpus(
    cfg: &ExperimentConfig,
    metas: &[ClipMeta],
    want_train: &[bool],
    want_eval: &[bool],
) -> Result<Vec<ClipFeatures>> {
    let renderer = Renderer::new(cfg)?;
    metas
        .iter()
        .zip(want_train.iter().zip(want_eval))
        .map(|(m, (&t, &e))| clip_features(cfg, &renderer, m, t, e))
        .collect()
}

pub fn clip_labels(metas: &[ClipMeta]) -> Vec<ClassLabel> {
    metas.iter().map(|m| m.class).collect()
}

pub fn clip_ids<'a>(metas: impl IntoIterator<Item = &'a ClipMeta>) -> Vec<String> {
    metas.into_iter().map(|m| m.id.clone()).collect()
}

/// The fixed train/validation/test split of the configured corpus.
pub fn corpus_split(cfg: &ExperimentConfig, metas: &[ClipMeta]) -> Result<Split> {
    let p = &cfg.protocol;
    stratified_split(&clip_labels(metas), p.train_fraction, p.val_fraction, p.split_seed)
}

/// Gamma-corrected training windows of the selected clips.
pub fn build_dataset(clips: &[ClipFeatures], idx: &[usize], pipeline: &FeaturePipeline, gamma: f64) -> Result<Dataset> {
    let h = pipeline.n_band_bins();
    let w = pipeline.win_frames;
    let mut set = Dataset::new(h, w);
    let g = gamma as f32;
    let mut buf = vec![0f32; h * w];
    for &i in idx {
        let clip = &clips[i];
        if clip.train_windows.is_empty() {
            return Err(data(format!("clip {} has no training windows", clip.meta.id)));
        }
        for win in clip.train_windows.chunks_exact(h * w) {
            for (b, v) in buf.iter_mut().zip(win) {
                *b = if gamma == 1.0 { *v } else { v.powf(g) };
            }
            set.push(&buf, clip.meta.class.index())?;
        }
    }
    Ok(set)
}

pub struct TrainedModel {
    pub model: Model<f32>,
    pub history: TrainHistory,
    /// SHA-256 of the training clip IDs.
    pub train_hash: String,
}

/// Trains a fresh model on `split.train`, early-stopping on `split.val`.
/// Fails if any test clip also appears in training or validation.
pub fn fit(
    cfg: &ExperimentConfig,
    model_cfg: &InceptionConfig,
    clips: &[ClipFeatures],
    split: &Split,
    gamma: f64,
) -> Result<TrainedModel> {
    let seen: Vec<&str> = split.train.iter().chain(&split.val).map(|&i| clips[i].meta.id.as_str()).collect();
    let test: Vec<&str> = split.test.iter().map(|&i| clips[i].meta.id.as_str()).collect();
    assert_disjoint(&seen, &test)?;
    let train_set = build_dataset(clips, &split.train, &cfg.features, gamma)?;
    let val_set = build_dataset(clips, &split.val, &cfg.features, gamma)?;
    let mut model = Model::<f32>::new(model_cfg.clone(), cfg.protocol.model_seed)?;
    let history = train(&mut model, &train_set, &val_set, &cfg.train)?;
    let train_hash = id_set_hash(&clip_ids(split.train.iter().map(|&i| &clips[i].meta)));
    Ok(TrainedModel { model, history, train_hash })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClipOutcome {
    pub id: String,
    pub truth: ClassLabel,
    pub predicted: ClassLabel,
    pub intervals: usize,
    pub interval_accuracy: f64,
}

/// Interval-level and clip-level scores of one evaluation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub interval: MetricsReport,
    pub clip: MetricsReport,
    pub clips: Vec<ClipOutcome>,
}

#[derive(Default)]
pub struct EvalAccumulator {
    interval_pred: Vec<usize>,
    interval_truth: Vec<usize>,
    clips: Vec<ClipOutcome>,
}

impl EvalAccumulator {
    pub fn add(&mut self, id: &str, truth: ClassLabel, c: &ClipClassification) {
        let n = c.intervals.predictions.len();
        let hits = c.intervals.predictions.iter().filter(|p| p.label == truth).count();
        for p in &c.intervals.predictions {
            self.interval_pred.push(p.label.index());
            self.interval_truth.push(truth.index());
        }
        self.clips.push(ClipOutcome {
            id: id.to_string(),
            truth,
            predicted: c.label,
            intervals: n,
            interval_accuracy: hits as f64 / n.max(1) as f64,
        });
    }

    pub fn finish(self) -> Result<Evaluation> {
        let cp: Vec<usize> = self.clips.iter().map(|c| c.predicted.index()).collect();
        let ct: Vec<usize> = self.clips.iter().map(|c| c.truth.index()).collect();
        Ok(Evaluation {
            interval: metrics(&self.interval_pred, &self.interval_truth)?,
            clip: metrics(&cp, &ct)?,
            clips: self.clips,
        })
    }
}

/// Classifies the stored excerpts of the selected clips.
pub fn evaluate(
    model: &Model<f32>,
    pipeline: &FeaturePipeline,
    gamma: f64,
    clips: &[ClipFeatures],
    idx: &[usize],
) -> Result<Evaluation> {
    let mut acc = EvalAccumulator::default();
    for &i in idx {
        let clip = &clips[i];
        let spec = clip.eval_spec.as_ref().ok_or_else(|| data(format!("clip {} was not kept for evaluation", clip.meta.id)))?;
        acc.add(&clip.meta.id, clip.meta.class, &classify_spectrogram(spec, model, pipeline, gamma)?);
    }
    acc.finish()
}

/// Classifies one rendered signal the way stored clips are evaluated.
pub fn classify_signal(cfg: &ExperimentConfig, model: &Model<f32>, signal: &MonoSignal) -> Result<ClipClassification> {
    let spec = normalized_spectrogram(signal, &cfg.features)?;
    let frames = excerpt_frames(&spec, &cfg.features, cfg.protocol.eval_excerpt_s);
    classify_spectrogram(&truncate_frames(&spec, frames), model, &cfg.features, cfg.features.gamma)
}

pub struct SplitRun {
    pub metas: Vec<ClipMeta>,
    pub split: Split,
    pub trained: TrainedModel,
    pub eval: Evaluation,
    pub test_hash: String,
}

/// Plans and renders the corpus, trains on the fixed split and evaluates the
/// test clips.
pub fn run_split(cfg: &ExperimentConfig) -> Result<SplitRun> {
    let metas = plan_corpus(cfg);
    let split = corpus_split(cfg, &metas)?;
    let (want_train, want_eval) = split_roles(metas.len(), &split);
    let clips = prepare_corpus(cfg, &metas, &want_train, &want_eval)?;
    let trained = fit(cfg, &cfg.model, &clips, &split, cfg.features.gamma)?;
    let eval = evaluate(&trained.model, &cfg.features, cfg.features.gamma, &clips, &split.test)?;
    let test_hash = id_set_hash(&clip_ids(split.test.iter().map(|&i| &metas[i])));
    Ok(SplitRun { metas, split, trained, eval, test_hash })
}

/// Which clips need training windows and which need evaluation features.
pub fn split_roles(n: usize, split: &Split) -> (Vec<bool>, Vec<bool>) {
    let mut t = vec![false; n];
    let mut e = vec![false; n];
    for &i in split.train.iter().chain(&split.val) {
        t[i] = true;
    }
    for &i in &split.test {
        e[i] = true;
    }
    (t, e)
}

/// Re-renders the test clips once each and scores them at every SNR level.
/// Noise for each clip comes from the same seed at every level.
pub fn sweep_snr(cfg: &ExperimentConfig, model: &Model<f32>, test: &[ClipMeta]) -> Result<Vec<(f64, Evaluation)>> {
    let renderer = Renderer::new(cfg)?;
    let levels = &cfg.sweeps.snr_levels_db;
    let mut accs: Vec<EvalAccumulator> = levels.iter().map(|_| EvalAccumulator::default()).collect();
    for meta in test {
        let clean = renderer.clean(meta, cfg.scene.room.as_ref())?;
        for (acc, &snr) in accs.iter_mut().zip(levels) {
            let c = classify_signal(cfg, model, &clean.at_snr(snr)?)?;
            acc.add(&meta.id, meta.class, &c);
        }
    }
    levels.iter().zip(accs).map(|(&l, a)| Ok((l, a.finish()?))).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoomCase {
    pub name: String,
    pub room: Option<RoomSpec>,
}

fn size_name(s: [f64; 3]) -> String {
    format!("{}x{}x{}", s[0], s[1], s[2])
}

/// Anechoic baseline, each configured room, and a fully absorbing copy of the
/// first room as a control. Arrays sit at the room center.
pub fn room_cases(cfg: &ExperimentConfig) -> Vec<RoomCase> {
    let s = &cfg.sweeps;
    let room = |size: [f64; 3], absorption: f64| RoomSpec {
        size,
        absorption,
        max_image_order: s.room_image_order,
        array_center: size.map(|v| v / 2.0),
    };
    let mut cases = vec![RoomCase { name: "anechoic".into(), room: None }];
    for r in &s.rooms {
        cases.push(RoomCase { name: size_name(r.size), room: Some(room(r.size, s.room_absorption)) });
    }
    if let Some(first) = s.rooms.first() {
        cases.push(RoomCase { name: format!("{}-absorbing", size_name(first.size)), room: Some(room(first.size, 1.0)) });
    }
    cases
}

/// Re-renders the test clips in every room case at the corpus SNR.
pub fn sweep_room(cfg: &ExperimentConfig, model: &Model<f32>, test: &[ClipMeta]) -> Result<Vec<(RoomCase, Evaluation)>> {
    let renderer = Renderer::new(cfg)?;
    room_cases(cfg)
        .into_iter()
        .map(|case| {
            let mut acc = EvalAccumulator::default();
            for meta in test {
                let signal = renderer.clean(meta, case.room.as_ref())?.at_snr(cfg.corpus.snr_db)?;
                acc.add(&meta.id, meta.class, &classify_signal(cfg, model, &signal)?);
            }
            Ok((case, acc.finish()?))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationCase {
    pub name: String,
    pub gamma: f64,
    pub inception: bool,
    pub model: InceptionConfig,
}

/// Full model, without gamma correction, without the multi-path blocks, and
/// without both.
pub fn ablation_cases(cfg: &ExperimentConfig) -> Vec<AblationCase> {
    let m = &cfg.model;
    let plain = InceptionConfig {
        blocks: m.blocks,
        mlp_hidden: m.mlp_hidden,
        n_classes: m.n_classes,
        stage_order: m.stage_order,
        input_height: m.input_height,
        input_width: m.input_width,
        ..InceptionConfig::plain_cnn()
    };
    let g = cfg.features.gamma;
    [("full", g, true), ("no_gamma", 1.0, true), ("no_inception", g, false), ("no_gamma_no_inception", 1.0, false)]
        .into_iter()
        .map(|(name, gamma, inception)| AblationCase {
            name: name.into(),
            gamma,
            inception,
            model: if inception { m.clone() } else { plain.clone() },
        })
        .collect()
}

pub struct AblationResult {
    pub case: AblationCase,
    pub param_count: usize,
    pub trained: TrainedModel,
    pub eval: Evaluation,
}

/// Trains and evaluates every ablation case on the same clips, split and seeds.
pub fn ablate(cfg: &ExperimentConfig) -> Result<Vec<AblationResult>> {
    let metas = plan_corpus(cfg);
    let split = corpus_split(cfg, &metas)?;
    let (want_train, want_eval) = split_roles(metas.len(), &split);
    let clips = prepare_corpus(cfg, &metas, &want_train, &want_eval)?;
    ablation_cases(cfg)
        .into_iter()
        .map(|case| {
            let trained = fit(cfg, &case.model, &clips, &split, case.gamma)?;
            let eval = evaluate(&trained.model, &cfg.features, case.gamma, &clips, &split.test)?;
            Ok(AblationResult { param_count: trained.model.param_count(), case, trained, eval })
        })
        .collect()
}

pub struct FoldResult {
    pub fold: usize,
    pub split: Split,
    pub train_hash: String,
    pub test_hash: String,
    pub best_epoch: usize,
    pub eval: Evaluation,
}

pub struct KfoldSummary {
    pub folds: Vec<FoldResult>,
    pub mean_f1: f64,
    /// Population standard deviation of the fold F1 scores.
    pub std_f1: f64,
    pub min_f1: f64,
    pub max_f1: f64,
}

/// Stratified k-fold over clips: every clip is tested exactly once, each fold
/// trains a fresh model with the same seeds.
pub fn kfold_run(cfg: &ExperimentConfig) -> Result<KfoldSummary> {
    let metas = plan_corpus(cfg);
    let labels = clip_labels(&metas);
    let k = cfg.protocol.kfold_k;
    let assign = kfold_assign(&labels, k, cfg.protocol.kfold_seed)?;
    let all = vec![true; metas.len()];
    let clips = prepare_corpus(cfg, &metas, &all, &all)?;
    let mut covered = vec![0usize; metas.len()];
    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let split = fold_split(&labels, &assign, f, cfg.protocol.val_fraction, cfg.protocol.split_seed);
        for &i in &split.test {
            covered[i] += 1;
        }
        let trained = fit(cfg, &cfg.model, &clips, &split, cfg.features.gamma)?;
        let eval = evaluate(&trained.model, &cfg.features, cfg.features.gamma, &clips, &split.test)?;
        let test_hash = id_set_hash(&clip_ids(split.test.iter().map(|&i| &metas[i])));
        folds.push(FoldResult {
            fold: f,
            split,
            train_hash: trained.train_hash,
            test_hash,
            best_epoch: trained.history.best_epoch,
            eval,
        });
    }
    if let Some(i) = covered.iter().position(|&c| c != 1) {
        return Err(data(format!("clip {} is tested {} times across folds", metas[i].id, covered[i])));
    }
    let f1: Vec<f64> = folds.iter().map(|r| r.eval.interval.macro_f1).collect();
    let mean = f1.iter().sum::<f64>() / k as f64;
    let std = (f1.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / k as f64).sqrt();
    Ok(KfoldSummary {
        folds,
        mean_f1: mean,
        std_f1: std,
        min_f1: f1.iter().copied().fold(f64::INFINITY, f64::min),
        max_f1: f1.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Timing {
    pub param_count: usize,
    pub windows: usize,
    pub runs_s: Vec<f64>,
    pub median_s: f64,
}

/// Wall-clock time of features, forward pass and aggregation on a whole
/// clip; median over `runs`.
pub fn time_inference(model: &Model<f32>, pipeline: &FeaturePipeline, signal: &MonoSignal, runs: usize) -> Result<Timing> {
    let mut runs_s = Vec::with_capacity(runs);
    let mut windows = 0;
    for _ in 0..runs.max(1) {
        let t0 = Instant::now();
        let spec = normalized_spectrogram(signal, pipeline)?;
        windows = classify_spectrogram(&spec, model, pipeline, pipeline.gamma)?.n_windows;
        runs_s.push(t0.elapsed().as_secs_f64());
    }
    let mut sorted = runs_s.clone();
    sorted.sort_by(f64::total_cmp);
    let median_s = sorted[sorted.len() / 2];
    Ok(Timing { param_count: model.param_count(), windows, runs_s, median_s })
}

fn f(v: f64) -> String {
    format!("{v:.6}")
}

pub const METRICS_HEADER: &str = "class,precision,recall,f1,support,predicted,undefined";

/// Per-class rows followed by `macro` and `accuracy` rows.
pub fn metrics_csv(r: &MetricsReport) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for (c, m) in ClassLabel::ALL.iter().zip(&r.per_class) {
        let undefined: Vec<&str> = [(m.precision_undefined, "precision"), (m.recall_undefined, "recall"), (m.f1_undefined, "f1")]
            .into_iter()
            .filter_map(|(u, n)| u.then_some(n))
            .collect();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            c.name(),
            f(m.precision),
            f(m.recall),
            f(m.f1),
            m.support,
            m.predicted,
            undefined.join("|")
        );
    }
    let _ = writeln!(s, "macro,{},{},{},{},{},", f(r.macro_precision), f(r.macro_recall), f(r.macro_f1), r.total, r.total);
    let _ = writeln!(s, "accuracy,,,{},{},{},", f(r.accuracy), r.total, r.total);
    s
}

/// Rows are true classes, columns predicted classes.
pub fn confusion_csv(r: &MetricsReport) -> String {
    let mut s = String::from("truth");
    for c in ClassLabel::ALL {
        s.push(',');
        s.push_str(c.name());
    }
    s.push('\n');
    for (c, row) in ClassLabel::ALL.iter().zip(&r.confusion) {
        s.push_str(c.name());
        for v in row {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

pub fn predictions_csv(e: &Evaluation) -> String {
    let mut s = String::from("clip,truth,predicted,intervals,interval_accuracy\n");
    for c in &e.clips {
        let _ = writeln!(s, "{},{},{},{},{}", c.id, c.truth.name(), c.predicted.name(), c.intervals, f(c.interval_accuracy));
    }
    s
}

const SCORE_HEADER: &str = "precision,recall,f1,accuracy,clip_accuracy,clip_f1,intervals,clips";

fn scores(e: &Evaluation) -> String {
    let i = &e.interval;
    format!(
        "{},{},{},{},{},{},{},{}",
        f(i.macro_precision),
        f(i.macro_recall),
        f(i.macro_f1),
        f(i.accuracy),
        f(e.clip.accuracy),
        f(e.clip.macro_f1),
        i.total,
        e.clip.total
    )
}

pub fn snr_csv(rows: &[(f64, Evaluation)]) -> String {
    let mut s = format!("snr_db,{SCORE_HEADER}\n");
    for (l, e) in rows {
        let _ = writeln!(s, "{l},{}", scores(e));
    }
    s
}

pub fn room_csv(rows: &[(RoomCase, Evaluation)]) -> String {
    let mut s = format!("room,width_m,length_m,height_m,absorption,image_order,{SCORE_HEADER}\n");
    for (c, e) in rows {
        let geo = match &c.room {
            Some(r) => format!("{},{},{},{},{}", r.size[0], r.size[1], r.size[2], r.absorption, r.max_image_order),
            None => ",,,,".to_string(),
        };
        let _ = writeln!(s, "{},{geo},{}", c.name, scores(e));
    }
    s
}

pub fn ablation_csv(rows: &[AblationResult]) -> String {
    let mut s = format!("config,gamma,inception,param_count,train_set_sha256,best_epoch,{SCORE_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.case.name,
            r.case.gamma,
            r.case.inception,
            r.param_count,
            r.trained.train_hash,
            r.trained.history.best_epoch,
            scores(&r.eval)
        );
    }
    s
}

pub fn kfold_csv(k: &KfoldSummary) -> String {
    let mut s = format!("fold,train_clips,val_clips,test_clips,best_epoch,{SCORE_HEADER}\n");
    for r in &k.folds {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.fold,
            r.split.train.len(),
            r.split.val.len(),
            r.split.test.len(),
            r.best_epoch,
            scores(&r.eval)
        );
    }
    s
}

pub fn kfold_summary_csv(k: &KfoldSummary) -> String {
    format!(
        "folds,mean_f1,std_f1,min_f1,max_f1,spread\n{},{},{},{},{},{}\n",
        k.folds.len(),
        f(k.mean_f1),
        f(k.std_f1),
        f(k.min_f1),
        f(k.max_f1),
        f(k.max_f1 - k.min_f1)
    )
}

pub fn timing_csv(t: &Timing) -> String {
    let mut sorted = t.runs_s.clone();
    sorted.sort_by(f64::total_cmp);
    format!(
        "param_count,windows,runs,median_s,min_s,max_s\n{},{},{},{},{},{}\n",
        t.param_count,
        t.windows,
        t.runs_s.len(),
        f(t.median_s),
        f(sorted[0]),
        f(sorted[sorted.len() - 1])
    )
}

/// What a run needs to be reproduced: the full config, its hash, the seeds
/// and the hashes of the clip sets involved.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_sha256: String,
    pub seeds: BTreeMap<String, u64>,
    pub datasets: BTreeMap<String, String>,
    /// Artifact path (relative to the run directory) to its SHA-256.
    pub artifacts: BTreeMap<String, String>,
    pub config: String,
}

impl RunManifest {
    pub fn new(command: &str, cfg: &ExperimentConfig) -> Self {
        let seeds = BTreeMap::from([
            ("corpus".to_string(), cfg.corpus.seed),
            ("split".to_string(), cfg.protocol.split_seed),
            ("model".to_string(), cfg.protocol.model_seed),
            ("train_shuffle".to_string(), cfg.train.seed),
            ("kfold".to_string(), cfg.protocol.kfold_seed),
        ]);
        Self {
            command: command.to_string(),
            config_sha256: cfg.hash(),
            seeds,
            datasets: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            config: cfg.to_toml(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }
}
