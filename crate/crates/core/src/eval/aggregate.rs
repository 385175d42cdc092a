use serde::Serialize;

use crate::beamform::{delay_and_sum, BeamWeights, SteeringDirection};
use crate::error::{invalid, shape, Result};
use crate::features::{FeaturePipeline, Spectrogram};
use crate::nn::{ClassProbs, Model, Tensor4};
use crate::scene::MultichannelRecording;
use crate::synth::{ClassLabel, MonoSignal};

/// Aggregation intervals per second (0.04 s each).
pub const INTERVALS_PER_SECOND: u64 = 25;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IntervalPrediction {
    pub interval_index: usize,
    pub probs: ClassProbs,
    pub label: ClassLabel,
    pub n_windows: usize,
}

/// Interval predictions in index order. Intervals up to the last populated
/// one that received no window are listed in `no_evidence`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IntervalTrack {
    pub predictions: Vec<IntervalPrediction>,
    pub no_evidence: Vec<usize>,
}

/// Interval containing window `i`'s center frame, computed exactly in
/// integers.
pub fn window_interval(i: usize, pipeline: &FeaturePipeline) -> usize {
    let center_frame = (i * pipeline.hop_frames + pipeline.win_frames / 2) as u64;
    (center_frame * pipeline.stft.hop as u64 * INTERVALS_PER_SECOND / pipeline.stft.sample_rate_hz as u64) as usize
}

/// Averages window distributions within each interval, summing in window
/// order.
pub fn aggregate_interval(window_probs: &[ClassProbs], assignment: &[usize]) -> Result<IntervalTrack> {
    if window_probs.len() != assignment.len() {
        return Err(shape(format!("{} windows but {} interval assignments", window_probs.len(), assignment.len())));
    }
    let Some(&max) = assignment.iter().max() else {
        return Ok(IntervalTrack { predictions: vec![], no_evidence: vec![] });
    };
    let mut sums = vec![[0.0f64; ClassLabel::COUNT]; max + 1];
    let mut counts = vec![0usize; max + 1];
    for (p, &a) in window_probs.iter().zip(assignment) {
        for (s, v) in sums[a].iter_mut().zip(&p.0) {
            *s += v;
        }
        counts[a] += 1;
    }
    let mut predictions = Vec::new();
    let mut no_evidence = Vec::new();
    for (idx, (s, &n)) in sums.iter().zip(&counts).enumerate() {
        if n == 0 {
            no_evidence.push(idx);
            continue;
        }
        let probs = ClassProbs::new(s.map(|v| v / n as f64))?;
        predictions.push(IntervalPrediction { interval_index: idx, probs, label: probs.label(), n_windows: n });
    }
    Ok(IntervalTrack { predictions, no_evidence })
}

/// Majority vote over interval labels; ties go to the largest summed
/// probability, then to the lowest class index.
pub fn majority_label(track: &IntervalTrack) -> Result<ClassLabel> {
    if track.predictions.is_empty() {
        return Err(invalid("no interval predictions to vote on"));
    }
    let mut votes = [0usize; ClassLabel::COUNT];
    let mut mass = [0.0f64; ClassLabel::COUNT];
    for p in &track.predictions {
        votes[p.label.index()] += 1;
        for (m, v) in mass.iter_mut().zip(&p.probs.0) {
            *m += v;
        }
    }
    let mut best = 0;
    for c in 1..ClassLabel::COUNT {
        if votes[c] > votes[best] || (votes[c] == votes[best] && mass[c] > mass[best]) {
            best = c;
        }
    }
    Ok(ClassLabel::from_index(best).expect("index below COUNT"))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClipClassification {
    pub intervals: IntervalTrack,
    pub label: ClassLabel,
    pub n_windows: usize,
}

/// Applies gamma to a normalized spectrogram, slides windows over its
/// first `max_frames` frames (all when `None`), classifies and aggregates.
pub fn classify_spectrogram(
    spec: &Spectrogram,
    model: &Model<f32>,
    pipeline: &FeaturePipeline,
    gamma: f64,
) -> Result<ClipClassification> {
    let (h, w, hop) = (spec.n_freq, pipeline.win_frames, pipeline.hop_frames);
    if h != model.config.input_height || w != model.config.input_width {
        return Err(shape(format!(
            "windows of {h}x{w} do not fit a model expecting {}x{}",
            model.config.input_height, model.config.input_width
        )));
    }
    let n = crate::features::window_count(spec.n_frames, w, hop);
    if n == 0 {
        return Err(crate::error::data("clip is too short for one window"));
    }
    let mut data = vec![0f32; n * h * w];
    for (i, chunk) in data.chunks_exact_mut(h * w).enumerate() {
        crate::features::extract_window(spec, i, w, hop, chunk);
    }
    if gamma != 1.0 {
        let g = gamma as f32;
        data.iter_mut().for_each(|v| *v = v.powf(g));
    }
    let probs = model.predict(&Tensor4::from_windows(&data, n, h, w)?)?;
    let assignment: Vec<usize> = (0..n).map(|i| window_interval(i, pipeline)).collect();
    let intervals = aggregate_interval(&probs, &assignment)?;
    let label = majority_label(&intervals)?;
    Ok(ClipClassification { intervals, label, n_windows: n })
}

/// Full chain for a single-channel clip: features, forward pass, interval
/// aggregation and clip vote.
pub fn classify_clip(signal: &MonoSignal, model: &Model<f32>, pipeline: &FeaturePipeline) -> Result<ClipClassification> {
    let spec = crate::features::normalize_minmax(&crate::features::bandpass_bins(
        &crate::features::stft(signal, &pipeline.stft)?,
        pipeline.band_lo_hz,
        pipeline.band_hi_hz,
    )?);
    classify_spectrogram(&spec, model, pipeline, pipeline.gamma)
}

/// Beamforms toward `dir`, then runs [`classify_clip`].
pub fn classify_recording(
    rec: &MultichannelRecording,
    dir: &SteeringDirection,
    weights: &BeamWeights,
    model: &Model<f32>,
    pipeline: &FeaturePipeline,
) -> Result<ClipClassification> {
    classify_clip(&delay_and_sum(rec, dir, weights)?, model, pipeline)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(v: [f64; 5]) -> ClassProbs {
        ClassProbs::new(v).unwrap()
    }

    #[test]
    fn mean_of_two_windows() {
        let t = aggregate_interval(&[p([0.8, 0.2, 0.0, 0.0, 0.0]), p([0.6, 0.4, 0.0, 0.0, 0.0])], &[0, 0]).unwrap();
        assert_eq!(t.predictions.len(), 1);
        let q = t.predictions[0].probs.0;
        assert!((q[0] - 0.7).abs() < 1e-15 && (q[1] - 0.3).abs() < 1e-15);
        assert_eq!(t.predictions[0].label, ClassLabel::Corona);
    }

    #[test]
    fn gaps_are_flagged() {
        let t = aggregate_interval(&[ClassProbs::uniform(), ClassProbs::uniform()], &[0, 3]).unwrap();
        assert_eq!(t.predictions.len(), 2);
        assert_eq!(t.no_evidence, vec![1, 2]);
    }

    #[test]
    fn default_interval_assignment() {
        let pl = FeaturePipeline::default();
        // Center of window 0 is frame 12 = 16 ms.
        assert_eq!(window_interval(0, &pl), 0);
        // Window 9: frame 84 = 112 ms, interval 2.
        assert_eq!(window_interval(9, &pl), 2);
        // Window 21: frame 180 = 240 ms, exactly on a boundary.
        assert_eq!(window_interval(21, &pl), 6);
    }

    #[test]
    fn vote_tie_uses_probability_mass() {
        let mk = |idx, probs| {
            let probs = p(probs);
            IntervalPrediction { interval_index: idx, probs, label: probs.label(), n_windows: 1 }
        };
        let t = IntervalTrack {
            predictions: vec![mk(0, [0.9, 0.1, 0.0, 0.0, 0.0]), mk(1, [0.0, 0.6, 0.4, 0.0, 0.0])],
            no_evidence: vec![],
        };
        assert_eq!(majority_label(&t).unwrap(), ClassLabel::Corona);
    }
}
