//! Split-conformal prediction sets with the RAPS score.
//!
//! With classes sorted by descending probability `π_(1) ≥ π_(2)`, the score
//! of a label at rank `r` is
//! `Σ_{j≤r} π_(j) + λ·max(0, r − k_reg) − u·π_(r)` where `u ≡ 0` unless
//! randomized. The threshold is the `⌈(1−α)(n+1)⌉`-th smallest calibration
//! score.

use alloc::vec::Vec;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::Label;
use crate::rng::{self, domain};

pub const SCORE_VERSION: &str = "raps-v1";

/// Threshold used when the quantile index exceeds the calibration size.
pub const TAU_CAP: f64 = f64::MAX;

const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConformalConfig {
    pub alpha: f64,
    pub lambda_reg: f64,
    pub k_reg: usize,
    pub randomized: bool,
    pub allow_empty_sets: bool,
    pub seed: u64,
}

impl Default for ConformalConfig {
    fn default() -> Self {
        Self { alpha: 0.1, lambda_reg: 0.01, k_reg: 1, randomized: false, allow_empty_sets: false, seed: 0 }
    }
}

impl ConformalConfig {
    pub fn validate(&self) -> Result<(), ConformalError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(ConformalError::Config("alpha must lie in (0, 1)"));
        }
        if !(self.lambda_reg >= 0.0 && self.lambda_reg.is_finite()) {
            return Err(ConformalError::Config("lambda_reg must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConformalError {
    #[error("probabilities {0:?} are not on the simplex")]
    OffSimplex([f64; 2]),
    #[error("empty calibration set")]
    EmptyCalibration,
    #[error("{scores} scores but {labels} labels")]
    Length { scores: usize, labels: usize },
    #[error("threshold was calibrated with score version {found}, expected {expected}")]
    Version { expected: &'static str, found: alloc::string::String },
    #[error("invalid conformal config: {0}")]
    Config(&'static str),
    #[error("empty evaluation set")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedThreshold {
    pub tau_hat: f64,
    pub n_calib: usize,
    pub score_definition_version: alloc::string::String,
    /// True when `tau_hat` is [`TAU_CAP`] (every set is the full label set).
    pub capped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub labels: Vec<Label>,
    pub sorted_probs: Vec<f64>,
    pub set_size: usize,
}

impl PredictionSet {
    pub fn contains(&self, l: Label) -> bool {
        self.labels.contains(&l)
    }

    /// True when the labels are the first `set_size` entries of the
    /// descending-probability order for `probs`.
    pub fn is_prefix_of(&self, probs: [f64; 2]) -> bool {
        let order = rank_order(probs);
        self.set_size == self.labels.len() && self.labels[..] == order[..self.set_size]
    }
}

fn check_simplex(p: [f64; 2]) -> Result<(), ConformalError> {
    let ok = p.iter().all(|v| *v >= -SIMPLEX_TOL && *v <= 1.0 + SIMPLEX_TOL) && libm::fabs(p[0] + p[1] - 1.0) <= SIMPLEX_TOL;
    if ok {
        Ok(())
    } else {
        Err(ConformalError::OffSimplex(p))
    }
}

/// Labels by descending probability; equal probabilities keep TMJ0 first.
pub fn rank_order(p: [f64; 2]) -> [Label; 2] {
    if p[1] > p[0] {
        [Label::Tmj1, Label::Tmj0]
    } else {
        [Label::Tmj0, Label::Tmj1]
    }
}

fn penalty(rank: usize, cfg: &ConformalConfig) -> f64 {
    cfg.lambda_reg * rank.saturating_sub(cfg.k_reg) as f64
}

pub fn raps_score(probs: [f64; 2], label: Label, cfg: &ConformalConfig, u: f64) -> Result<f64, ConformalError> {
    check_simplex(probs)?;
    let order = rank_order(probs);
    let rank = if order[0] == label { 1 } else { 2 };
    let sorted = [probs[order[0].index()], probs[order[1].index()]];
    let cum: f64 = sorted[..rank].iter().sum();
    let u = if cfg.randomized { u } else { 0.0 };
    Ok((cum + penalty(rank, cfg) - u * sorted[rank - 1]).max(0.0))
}

/// Index of the conformal quantile (1-based), `⌈(1−α)(n+1)⌉`.
pub fn quantile_index(n: usize, alpha: f64) -> usize {
    libm::ceil((1.0 - alpha) * (n as f64 + 1.0) - 1e-9) as usize
}

/// Threshold from precomputed calibration scores.
pub fn calibrate_scores(scores: &[f64], cfg: &ConformalConfig) -> Result<CalibratedThreshold, ConformalError> {
    cfg.validate()?;
    let n = scores.len();
    if n == 0 {
        return Err(ConformalError::EmptyCalibration);
    }
    let k = quantile_index(n, cfg.alpha).max(1);
    let (tau_hat, capped) = if k > n {
        (TAU_CAP, true)
    } else {
        let mut s = scores.to_vec();
        s.sort_unstable_by(f64::total_cmp);
        (s[k - 1], false)
    };
    Ok(CalibratedThreshold { tau_hat, n_calib: n, score_definition_version: SCORE_VERSION.into(), capped })
}

/// Uniform draw for row `i` of a calibration or prediction batch.
pub fn row_uniform(seed: u64, i: usize) -> f64 {
    rng::stream(seed, domain::CONFORMAL, i as u64).random::<f64>()
}

/// Scores for calibration rows; `u` comes from [`row_uniform`] when randomized.
pub fn calibration_scores(probs: &[[f64; 2]], y: &[Label], cfg: &ConformalConfig) -> Result<Vec<f64>, ConformalError> {
    if probs.len() != y.len() {
        return Err(ConformalError::Length { scores: probs.len(), labels: y.len() });
    }
    probs
        .iter()
        .zip(y)
        .enumerate()
        .map(|(i, (p, l))| {
            let u = if cfg.randomized { row_uniform(cfg.seed, i) } else { 0.0 };
            raps_score(*p, *l, cfg, u)
        })
        .collect()
}

pub fn calibrate(probs: &[[f64; 2]], y: &[Label], cfg: &ConformalConfig) -> Result<(CalibratedThreshold, Vec<f64>), ConformalError> {
    let scores = calibration_scores(probs, y, cfg)?;
    calibrate_scores(&scores, cfg).map(|t| (t, scores))
}

/// Rank `j` enters the set when the running score, evaluated at the lower
/// edge of its mass, stays below the threshold: `S_j − π_(j) < τ` when
/// deterministic, `S_j − u·π_(j) ≤ τ` when randomized.
pub fn predict_set(
    probs: [f64; 2],
    threshold: &CalibratedThreshold,
    cfg: &ConformalConfig,
    u: f64,
) -> Result<PredictionSet, ConformalError> {
    if threshold.score_definition_version != SCORE_VERSION {
        return Err(ConformalError::Version { expected: SCORE_VERSION, found: threshold.score_definition_version.clone() });
    }
    check_simplex(probs)?;
    let order = rank_order(probs);
    let sorted = [probs[order[0].index()], probs[order[1].index()]];
    let tau = threshold.tau_hat;
    let mut labels = Vec::with_capacity(2);
    let mut cum = 0.0;
    for (j, label) in order.iter().enumerate() {
        let rank = j + 1;
        cum += sorted[j];
        let s = cum + penalty(rank, cfg);
        let include = threshold.capped
            || if cfg.randomized { s - u * sorted[j] <= tau } else { s - sorted[j] < tau };
        if !include {
            break;
        }
        labels.push(*label);
    }
    if labels.is_empty() && !cfg.allow_empty_sets {
        labels.push(order[0]);
    }
    Ok(PredictionSet { set_size: labels.len(), labels, sorted_probs: sorted.to_vec() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetDiagnostics {
    /// Indexed by true class.
    pub coverage: [f64; 2],
    pub mean_set_size: [f64; 2],
    pub class_counts: [usize; 2],
    pub marginal_coverage: f64,
    pub mean_set_size_overall: f64,
}

pub fn evaluate_sets(sets: &[PredictionSet], y_true: &[Label]) -> Result<SetDiagnostics, ConformalError> {
    if sets.len() != y_true.len() {
        return Err(ConformalError::Length { scores: sets.len(), labels: y_true.len() });
    }
    if sets.is_empty() {
        return Err(ConformalError::Empty);
    }
    let mut covered = [0usize; 2];
    let mut sizes = [0usize; 2];
    let mut counts = [0usize; 2];
    for (s, y) in sets.iter().zip(y_true) {
        let c = y.index();
        counts[c] += 1;
        sizes[c] += s.set_size;
        covered[c] += s.contains(*y) as usize;
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let n = sets.len();
    Ok(SetDiagnostics {
        coverage: [ratio(covered[0], counts[0]), ratio(covered[1], counts[1])],
        mean_set_size: [ratio(sizes[0], counts[0]), ratio(sizes[1], counts[1])],
        class_counts: counts,
        marginal_coverage: ratio(covered[0] + covered[1], n),
        mean_set_size_overall: ratio(sizes[0] + sizes[1], n),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn plain(lambda: f64) -> ConformalConfig {
        ConformalConfig { lambda_reg: lambda, ..Default::default() }
    }

    fn tau(t: f64) -> CalibratedThreshold {
        CalibratedThreshold { tau_hat: t, n_calib: 10, score_definition_version: SCORE_VERSION.into(), capped: false }
    }

    #[test]
    fn score_examples() {
        assert_eq!(raps_score([1.0, 0.0], Label::Tmj0, &plain(0.0), 0.0).unwrap(), 1.0);
        assert_eq!(raps_score([0.7, 0.3], Label::Tmj1, &plain(0.0), 0.0).unwrap(), 1.0);
        let s = raps_score([0.7, 0.3], Label::Tmj1, &ConformalConfig { lambda_reg: 0.2, k_reg: 1, ..Default::default() }, 0.0);
        assert!((s.unwrap() - 1.2).abs() < 1e-12);
        assert!(matches!(raps_score([0.7, 0.7], Label::Tmj0, &plain(0.0), 0.0), Err(ConformalError::OffSimplex(_))));
    }

    #[test]
    fn quantile_rule() {
        let cfg = plain(0.0);
        let t = calibrate_scores(&[0.2, 0.4, 0.6, 0.8], &cfg).unwrap();
        assert!(t.capped);
        assert_eq!(t.tau_hat, TAU_CAP);
        let t = calibrate_scores(&vec![0.5; 1000], &cfg).unwrap();
        assert_eq!(t.tau_hat, 0.5);
        let scores: Vec<f64> = (0..500).map(|i| 1.0 + i as f64 / 1000.0).rev().collect();
        let t = calibrate_scores(&scores, &ConformalConfig { alpha: 0.999, ..cfg }).unwrap();
        assert_eq!(t.tau_hat, 1.0);
        // 9 points, α = 0.1: k = ⌈0.9·10⌉ = 9
        let nine: Vec<f64> = (1..=9).map(|i| i as f64).collect();
        assert_eq!(quantile_index(9, 0.1), 9);
        assert_eq!(calibrate_scores(&nine, &cfg).unwrap().tau_hat, 9.0);
        assert_eq!(calibrate_scores(&[], &cfg), Err(ConformalError::EmptyCalibration));
    }

    #[test]
    fn set_examples() {
        let cfg = plain(0.0);
        let s = predict_set([0.9, 0.1], &tau(0.95), &cfg, 0.0).unwrap();
        assert_eq!(s.labels, vec![Label::Tmj0, Label::Tmj1]);
        let s = predict_set([0.9, 0.1], &tau(0.9), &cfg, 0.0).unwrap();
        assert_eq!(s.labels, vec![Label::Tmj0]);
        let mut cap = tau(TAU_CAP);
        cap.capped = true;
        assert_eq!(predict_set([0.2, 0.8], &cap, &cfg, 0.0).unwrap().set_size, 2);
        let s = predict_set([0.2, 0.8], &tau(0.0), &ConformalConfig { allow_empty_sets: true, ..cfg }, 0.0).unwrap();
        assert_eq!(s.set_size, 0);
        let s = predict_set([0.2, 0.8], &tau(0.0), &cfg, 0.0).unwrap();
        assert_eq!(s.labels, vec![Label::Tmj1]);
        let mut old = tau(0.5);
        old.score_definition_version = "aps-v0".into();
        assert!(matches!(predict_set([0.5, 0.5], &old, &cfg, 0.0), Err(ConformalError::Version { .. })));
    }

    #[test]
    fn diagnostics_hand_fixture() {
        let mk = |l: &[Label]| PredictionSet { labels: l.to_vec(), sorted_probs: vec![0.5, 0.5], set_size: l.len() };
        use Label::*;
        let sets = [mk(&[Tmj0]), mk(&[Tmj0, Tmj1]), mk(&[Tmj1]), mk(&[Tmj0])];
        let d = evaluate_sets(&sets, &[Tmj0, Tmj1, Tmj1, Tmj0]).unwrap();
        assert_eq!(d.coverage, [1.0, 1.0]);
        assert_eq!(d.mean_set_size, [1.0, 1.5]);
        assert_eq!(d.marginal_coverage, 1.0);
        let full = [mk(&[Tmj0, Tmj1]), mk(&[Tmj1, Tmj0])];
        let d = evaluate_sets(&full, &[Tmj0, Tmj1]).unwrap();
        assert_eq!((d.coverage, d.mean_set_size), ([1.0, 1.0], [2.0, 2.0]));
        assert!(evaluate_sets(&full, &[Tmj0]).is_err());
    }

    fn probs() -> impl Strategy<Value = [f64; 2]> {
        (0.0f64..=1.0).prop_map(|p| [1.0 - p, p])
    }

    proptest! {
        #[test]
        fn prefix_and_bounds(p in probs(), t in 0.0f64..2.0, lambda in 0.0f64..0.5, u in 0.0f64..1.0, rnd: bool, empty: bool) {
            let cfg = ConformalConfig { lambda_reg: lambda, randomized: rnd, allow_empty_sets: empty, ..Default::default() };
            let s = predict_set(p, &tau(t), &cfg, u).unwrap();
            prop_assert!(s.is_prefix_of(p));
            if empty { prop_assert!(s.set_size <= 2) } else { prop_assert!((1..=2).contains(&s.set_size)) }
        }

        #[test]
        fn alpha_monotone(scores in proptest::collection::vec(0.0f64..2.0, 1..60), a1 in 0.01f64..0.99, a2 in 0.01f64..0.99, p in probs()) {
            let (lo, hi) = if a1 < a2 { (a1, a2) } else { (a2, a1) };
            let cfg = plain(0.01);
            let t_lo = calibrate_scores(&scores, &ConformalConfig { alpha: lo, ..cfg }).unwrap();
            let t_hi = calibrate_scores(&scores, &ConformalConfig { alpha: hi, ..cfg }).unwrap();
            prop_assert!(t_lo.tau_hat >= t_hi.tau_hat);
            let big = predict_set(p, &t_lo, &cfg, 0.0).unwrap();
            let small = predict_set(p, &t_hi, &cfg, 0.0).unwrap();
            prop_assert!(small.labels.iter().all(|l| big.contains(*l)));
        }

        #[test]
        fn penalty_shrinks(p in probs(), t in 0.0f64..2.0, l1 in 0.0f64..1.0, l2 in 0.0f64..1.0) {
            let (lo, hi) = if l1 < l2 { (l1, l2) } else { (l2, l1) };
            let a = predict_set(p, &tau(t), &plain(lo), 0.0).unwrap();
            let b = predict_set(p, &tau(t), &plain(hi), 0.0).unwrap();
            prop_assert!(b.set_size <= a.set_size);
        }

        #[test]
        fn deterministic_score_monotone_in_rank(p in probs(), lambda in 0.0f64..1.0) {
            let cfg = plain(lambda);
            let order = rank_order(p);
            let s1 = raps_score(p, order[0], &cfg, 0.0).unwrap();
            let s2 = raps_score(p, order[1], &cfg, 0.0).unwrap();
            prop_assert!(s1 >= 0.0 && s2 >= s1);
        }
    }
}
