//! Per-class precision, sensitivity and F1, and their macro average.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::Label;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("{truth} true labels but {pred} predictions")]
    Length { truth: usize, pred: usize },
    #[error("no labels")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerClass {
    pub precision: f64,
    pub sensitivity: f64,
    pub f1: f64,
    pub confusion: Confusion,
    /// A ratio had a zero denominator and was reported as 0.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    /// Indexed by [`Label::index`].
    pub per_class: [PerClass; 2],
    pub macro_f1: f64,
}

fn ratio(a: usize, b: usize, degenerate: &mut bool) -> f64 {
    if b == 0 {
        *degenerate = true;
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Harmonic mean of precision and sensitivity, 0 when both are 0.
pub fn f1(precision: f64, sensitivity: f64) -> f64 {
    if precision + sensitivity == 0.0 {
        0.0
    } else {
        2.0 * precision * sensitivity / (precision + sensitivity)
    }
}

impl PerClass {
    pub fn from_confusion(c: Confusion) -> PerClass {
        let mut degenerate = false;
        let precision = ratio(c.tp, c.tp + c.fp, &mut degenerate);
        let sensitivity = ratio(c.tp, c.tp + c.fn_, &mut degenerate);
        PerClass { precision, sensitivity, f1: f1(precision, sensitivity), confusion: c, degenerate }
    }
}

impl ClassMetrics {
    pub fn from_confusions(c: [Confusion; 2]) -> ClassMetrics {
        let per_class = c.map(PerClass::from_confusion);
        ClassMetrics { macro_f1: (per_class[0].f1 + per_class[1].f1) / 2.0, per_class }
    }

    /// From the binary confusion matrix `counts[truth][pred]`.
    pub fn from_matrix(counts: [[usize; 2]; 2]) -> ClassMetrics {
        let conf = |c: usize| {
            let o = 1 - c;
            Confusion { tp: counts[c][c], fp: counts[o][c], tn: counts[o][o], fn_: counts[c][o] }
        };
        Self::from_confusions([conf(0), conf(1)])
    }

    pub fn class(&self, l: Label) -> &PerClass {
        &self.per_class[l.index()]
    }
}

pub fn compute_metrics(y_true: &[Label], y_pred: &[Label]) -> Result<ClassMetrics, MetricsError> {
    if y_true.len() != y_pred.len() {
        return Err(MetricsError::Length { truth: y_true.len(), pred: y_pred.len() });
    }
    if y_true.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut counts = [[0usize; 2]; 2];
    for (t, p) in y_true.iter().zip(y_pred) {
        counts[t.index()][p.index()] += 1;
    }
    Ok(ClassMetrics::from_matrix(counts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;
    use proptest::prelude::*;
    use Label::*;

    #[test]
    fn perfect() {
        let y = [Tmj0, Tmj1, Tmj1, Tmj0];
        let m = compute_metrics(&y, &y).unwrap();
        for c in &m.per_class {
            assert_eq!((c.precision, c.sensitivity, c.f1), (1.0, 1.0, 1.0));
            assert!(!c.degenerate);
        }
        assert_eq!(m.macro_f1, 1.0);
    }

    #[test]
    fn all_negative_predictions() {
        let m = compute_metrics(&[Tmj0, Tmj1, Tmj1], &[Tmj0; 3]).unwrap();
        let c = m.class(Tmj1);
        assert_eq!((c.precision, c.sensitivity, c.f1), (0.0, 0.0, 0.0));
        assert!(c.degenerate);
        assert!(!m.class(Tmj0).degenerate);
    }

    #[test]
    fn errors() {
        assert_eq!(compute_metrics(&[Tmj0], &[]), Err(MetricsError::Length { truth: 1, pred: 0 }));
        assert_eq!(compute_metrics(&[], &[]), Err(MetricsError::Empty));
    }

    fn labels() -> impl Strategy<Value = (Vec<Label>, Vec<Label>)> {
        proptest::collection::vec((any::<bool>(), any::<bool>()), 1..200)
            .prop_map(|v| v.into_iter().map(|(a, b)| (Label::from_bool(a), Label::from_bool(b))).unzip())
    }

    proptest! {
        #[test]
        fn swap_symmetry((t, p) in labels()) {
            let a = compute_metrics(&t, &p).unwrap();
            let ts: Vec<Label> = t.iter().map(|l| l.other()).collect();
            let ps: Vec<Label> = p.iter().map(|l| l.other()).collect();
            let b = compute_metrics(&ts, &ps).unwrap();
            prop_assert_eq!(a.macro_f1, b.macro_f1);
            prop_assert!((0.0..=1.0).contains(&a.macro_f1));
        }
    }
}
