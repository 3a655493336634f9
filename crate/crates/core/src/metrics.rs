//! Classification metrics and certified robustness accuracy.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::verifier::{Verdict, VerdictCode};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("{preds} predictions but {labels} labels")]
    LengthMismatch { preds: usize, labels: usize },
    #[error("class {class} at position {index} is not below {num_classes}")]
    ClassOutOfRange { index: usize, class: usize, num_classes: usize },
    #[error("no samples")]
    Empty,
}

/// One-vs-rest counts for each class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: Vec<u64>,
    pub tn: Vec<u64>,
    pub fp: Vec<u64>,
    pub fn_: Vec<u64>,
    pub correct: u64,
    pub total: u64,
}

impl ConfusionCounts {
    pub fn num_classes(&self) -> usize {
        self.tp.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision_macro: f64,
    pub recall_macro: f64,
    pub f1: f64,
}

pub fn confusion(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<ConfusionCounts, MetricsError> {
    if preds.len() != labels.len() {
        return Err(MetricsError::LengthMismatch { preds: preds.len(), labels: labels.len() });
    }
    for (index, (&p, &y)) in preds.iter().zip(labels).enumerate() {
        if let Some(class) = [p, y].into_iter().find(|&c| c >= num_classes) {
            return Err(MetricsError::ClassOutOfRange { index, class, num_classes });
        }
    }
    let mut tp = vec![0u64; num_classes];
    let mut fp = vec![0u64; num_classes];
    let mut fn_ = vec![0u64; num_classes];
    let mut correct = 0;
    for (&p, &y) in preds.iter().zip(labels) {
        if p == y {
            tp[p] += 1;
            correct += 1;
        } else {
            fp[p] += 1;
            fn_[y] += 1;
        }
    }
    let total = preds.len() as u64;
    let tn = (0..num_classes).map(|c| total - tp[c] - fp[c] - fn_[c]).collect();
    Ok(ConfusionCounts { tp, tn, fp, fn_, correct, total })
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Accuracy is correct/total. Precision and recall are macro averages in
/// which a class with a zero denominator contributes 0.
pub fn compute_metrics(cc: &ConfusionCounts) -> Result<MetricsReport, MetricsError> {
    if cc.total == 0 || cc.num_classes() == 0 {
        return Err(MetricsError::Empty);
    }
    let n = cc.num_classes() as f64;
    let mut p_sum = 0.0;
    let mut r_sum = 0.0;
    for c in 0..cc.num_classes() {
        p_sum += ratio(cc.tp[c], cc.tp[c] + cc.fp[c]);
        r_sum += ratio(cc.tp[c], cc.tp[c] + cc.fn_[c]);
    }
    let precision = p_sum / n;
    let recall = r_sum / n;
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    Ok(MetricsReport { accuracy: ratio(cc.correct, cc.total), precision_macro: precision, recall_macro: recall, f1 })
}

/// Fraction of codes equal to robust.
pub fn cra_codes(codes: &[VerdictCode]) -> Result<f64, MetricsError> {
    if codes.is_empty() {
        return Err(MetricsError::Empty);
    }
    let robust = codes.iter().filter(|&&c| c == VerdictCode::Robust).count();
    Ok(robust as f64 / codes.len() as f64)
}

pub fn cra(verdicts: &[Verdict]) -> Result<f64, MetricsError> {
    cra_codes(&verdicts.iter().map(|v| v.code).collect::<Vec<_>>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use VerdictCode::*;

    #[test]
    fn perfect() {
        let cc = confusion(&[0, 1, 0], &[0, 1, 0], 2).unwrap();
        assert_eq!(cc.tp, vec![2, 1]);
        assert_eq!(cc.fp, vec![0, 0]);
        assert_eq!(cc.fn_, vec![0, 0]);
        let m = compute_metrics(&cc).unwrap();
        assert_eq!((m.accuracy, m.precision_macro, m.recall_macro, m.f1), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn one_mistake() {
        let cc = confusion(&[1, 1], &[0, 1], 2).unwrap();
        assert_eq!(cc.fp, vec![0, 1]);
        assert_eq!(cc.fn_, vec![1, 0]);
        assert_eq!(cc.tn, vec![1, 0]);
    }

    #[test]
    fn all_wrong_binary() {
        let m = compute_metrics(&confusion(&[1, 0, 1], &[0, 1, 0], 2).unwrap()).unwrap();
        assert_eq!((m.accuracy, m.precision_macro, m.recall_macro, m.f1), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn three_class_by_hand() {
        // confusion matrix rows = label, cols = pred:
        //   [2 1 0]
        //   [0 1 1]
        //   [1 0 2]
        let labels = [0, 0, 0, 1, 1, 2, 2, 2];
        let preds = [0, 0, 1, 1, 2, 0, 2, 2];
        let m = compute_metrics(&confusion(&preds, &labels, 3).unwrap()).unwrap();
        let p = (2.0 / 3.0 + 1.0 / 2.0 + 2.0 / 3.0) / 3.0;
        let r = (2.0 / 3.0 + 1.0 / 2.0 + 2.0 / 3.0) / 3.0;
        assert_eq!(m.accuracy, 5.0 / 8.0);
        assert!((m.precision_macro - p).abs() < 1e-15);
        assert!((m.recall_macro - r).abs() < 1e-15);
        assert!((m.f1 - 2.0 * p * r / (p + r)).abs() < 1e-15);
    }

    #[test]
    fn absent_class_counts_as_zero() {
        let m = compute_metrics(&confusion(&[0, 1], &[0, 1], 3).unwrap()).unwrap();
        assert!((m.precision_macro - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        assert_eq!(confusion(&[0], &[0, 1], 2), Err(MetricsError::LengthMismatch { preds: 1, labels: 2 }));
        assert!(matches!(confusion(&[0, 2], &[0, 1], 2), Err(MetricsError::ClassOutOfRange { class: 2, .. })));
        assert_eq!(compute_metrics(&confusion(&[], &[], 2).unwrap()), Err(MetricsError::Empty));
        assert_eq!(cra_codes(&[]), Err(MetricsError::Empty));
    }

    #[test]
    fn cra_examples() {
        assert_eq!(cra_codes(&[Robust, Robust]).unwrap(), 1.0);
        assert_eq!(cra_codes(&[Robust, Falsified, Unknown, Robust]).unwrap(), 0.5);
    }
}
