use serde::Serialize;

use crate::error::{invalid, shape, Result};
use crate::synth::ClassLabel;

const K: usize = ClassLabel::COUNT;

/// One-vs-rest scores of one class. A ratio with a zero denominator is
/// reported as 0 and flagged.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Default)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// True instances of the class.
    pub support: u64,
    /// Instances predicted as the class.
    pub predicted: u64,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub f1_undefined: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub per_class: [ClassMetrics; K],
    /// Unweighted means over the classes that occur in the truth or the
    /// predictions.
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    /// `confusion[truth][predicted]`
    pub confusion: [[u64; K]; K],
    pub total: u64,
    /// Class indices included in the macro averages.
    pub averaged_classes: Vec<usize>,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn metrics(preds: &[usize], truth: &[usize]) -> Result<MetricsReport> {
    if preds.len() != truth.len() {
        return Err(shape(format!("{} predictions for {} labels", preds.len(), truth.len())));
    }
    if preds.is_empty() {
        return Err(invalid("metrics need at least one sample"));
    }
    if let Some(&l) = preds.iter().chain(truth).find(|&&l| l >= K) {
        return Err(invalid(format!("class index {l} out of range")));
    }
    let mut confusion = [[0u64; K]; K];
    for (&p, &t) in preds.iter().zip(truth) {
        confusion[t][p] += 1;
    }
    let mut per_class = [ClassMetrics::default(); K];
    for (c, m) in per_class.iter_mut().enumerate() {
        let tp = confusion[c][c];
        let support: u64 = confusion[c].iter().sum();
        let predicted: u64 = (0..K).map(|t| confusion[t][c]).sum();
        let (precision, pu) = ratio(tp, predicted);
        let (recall, ru) = ratio(tp, support);
        let (f1, fu) = if precision + recall > 0.0 {
            (2.0 * precision * recall / (precision + recall), false)
        } else {
            (0.0, true)
        };
        *m = ClassMetrics {
            precision,
            recall,
            f1,
            support,
            predicted,
            precision_undefined: pu,
            recall_undefined: ru,
            f1_undefined: fu,
        };
    }
    let averaged_classes: Vec<usize> = (0..K).filter(|&c| per_class[c].support + per_class[c].predicted > 0).collect();
    let n = averaged_classes.len() as f64;
    let mean = |f: fn(&ClassMetrics) -> f64| averaged_classes.iter().map(|&c| f(&per_class[c])).sum::<f64>() / n;
    let total = preds.len() as u64;
    let trace: u64 = (0..K).map(|c| confusion[c][c]).sum();
    Ok(MetricsReport {
        per_class,
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        accuracy: trace as f64 / total as f64,
        confusion,
        total,
        averaged_classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_sample_example() {
        let r = metrics(&[0, 0, 1], &[0, 1, 1]).unwrap();
        assert!((r.accuracy - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!((r.per_class[0].precision, r.per_class[0].recall), (0.5, 1.0));
        assert_eq!((r.per_class[1].precision, r.per_class[1].recall), (1.0, 0.5));
        assert!((r.macro_f1 - 2.0 / 3.0).abs() < 1e-4);
    }

    #[test]
    fn single_class_truth() {
        let r = metrics(&[3, 3], &[3, 3]).unwrap();
        assert_eq!(r.macro_f1, 1.0);
        assert_eq!(r.averaged_classes, vec![3]);
        assert!(r.per_class[0].precision_undefined && r.per_class[0].f1 == 0.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(metrics(&[0], &[0, 1]).is_err());
        assert!(metrics(&[], &[]).is_err());
        assert!(metrics(&[5], &[0]).is_err());
    }
}
