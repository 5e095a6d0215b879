//! Path-dependent TreeSHAP for the TMJ1 probability.
//!
//! The value function of a coalition `S` is the cover-weighted expectation
//! of the tree output when the features in `S` are fixed to `x` and every
//! other split is averaged over its children by training cover.
//! [`brute_force_shap`] evaluates the same function on all subsets.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forest::{Forest, Node, Tree};
use crate::matrix::Matrix;

pub const BRUTE_FORCE_MAX_FEATURES: usize = 15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExplainError {
    #[error("node {0} has zero cover")]
    ZeroCover(usize),
    #[error("tree uses feature {feature} but the input has {d} values")]
    Dimension { feature: usize, d: usize },
    #[error("brute-force enumeration refused for {0} features")]
    TooManyFeatures(usize),
    #[error("non-finite input at feature {0}")]
    NonFinite(usize),
    #[error("empty sample set")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub per_feature: Vec<f64>,
    pub base_value: f64,
    pub output: f64,
}

impl Attribution {
    /// `|base + Σ φ − output|`.
    pub fn local_accuracy_gap(&self) -> f64 {
        libm::fabs(self.base_value + self.per_feature.iter().sum::<f64>() - self.output)
    }

    /// Coordinate-wise mean of equally sized attributions.
    pub fn mean(parts: &[Attribution]) -> Attribution {
        let d = parts.first().map_or(0, |a| a.per_feature.len());
        let n = parts.len() as f64;
        let mut out = Attribution { per_feature: vec![0.0; d], base_value: 0.0, output: 0.0 };
        for a in parts {
            for (o, v) in out.per_feature.iter_mut().zip(&a.per_feature) {
                *o += v;
            }
            out.base_value += a.base_value;
            out.output += a.output;
        }
        out.per_feature.iter_mut().for_each(|v| *v /= n);
        out.base_value /= n;
        out.output /= n;
        out
    }
}

fn check(tree: &Tree, x: &[f64]) -> Result<(), ExplainError> {
    for (i, n) in tree.nodes().iter().enumerate() {
        if n.cover() == 0 {
            return Err(ExplainError::ZeroCover(i));
        }
        if let Node::Internal { feature, .. } = n {
            if *feature >= x.len() {
                return Err(ExplainError::Dimension { feature: *feature, d: x.len() });
            }
        }
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(ExplainError::NonFinite(i));
    }
    Ok(())
}

/// Conditional expectation with the features flagged in `known` fixed to `x`.
pub fn expected_value(tree: &Tree, x: &[f64], known: &dyn Fn(usize) -> bool) -> f64 {
    fn rec(nodes: &[Node], i: usize, x: &[f64], known: &dyn Fn(usize) -> bool) -> f64 {
        match &nodes[i] {
            Node::Leaf { value, .. } => *value,
            Node::Internal { feature, threshold, left, right, cover } => {
                if known(*feature) {
                    let next = if x[*feature] <= *threshold { *left } else { *right };
                    rec(nodes, next, x, known)
                } else {
                    let (cl, cr) = (nodes[*left].cover() as f64, nodes[*right].cover() as f64);
                    (cl * rec(nodes, *left, x, known) + cr * rec(nodes, *right, x, known)) / *cover as f64
                }
            }
        }
    }
    rec(tree.nodes(), 0, x, known)
}

#[derive(Clone, Copy)]
struct PathElem {
    feature: Option<usize>,
    zero: f64,
    one: f64,
    weight: f64,
}

fn extend(m: &mut [PathElem], l: usize, zero: f64, one: f64, feature: Option<usize>) {
    m[l] = PathElem { feature, zero, one, weight: if l == 0 { 1.0 } else { 0.0 } };
    let inv = 1.0 / (l + 1) as f64;
    for i in (0..l).rev() {
        m[i + 1].weight += one * m[i].weight * (i + 1) as f64 * inv;
        m[i].weight = zero * m[i].weight * (l - i) as f64 * inv;
    }
}

/// Removes element `i` from a path of `len` elements.
fn unwind(m: &mut [PathElem], len: usize, i: usize) {
    let l = len - 1;
    let lf = (l + 1) as f64;
    let (one, zero) = (m[i].one, m[i].zero);
    let mut n = m[l].weight;
    for j in (0..l).rev() {
        if one != 0.0 {
            let t = m[j].weight;
            m[j].weight = n * lf / ((j + 1) as f64 * one);
            n = t - m[j].weight * zero * (l - j) as f64 / lf;
        } else {
            m[j].weight = m[j].weight * lf / (zero * (l - j) as f64);
        }
    }
    for j in i..l {
        m[j].feature = m[j + 1].feature;
        m[j].zero = m[j + 1].zero;
        m[j].one = m[j + 1].one;
    }
}

/// `recip[k] = 1/k`, so the serial recurrences avoid divisions.
fn unwound_sum(m: &[PathElem], i: usize, recip: &[f64]) -> f64 {
    let l = m.len() - 1;
    let lf = (l + 1) as f64;
    let (one, zero) = (m[i].one, m[i].zero);
    let mut total = 0.0;
    if one != 0.0 {
        let a = lf / one;
        let b = zero * recip[l + 1];
        let mut n = m[l].weight;
        for j in (0..l).rev() {
            let t = n * a * recip[j + 1];
            total += t;
            n = m[j].weight - t * b * (l - j) as f64;
        }
    } else {
        let a = lf / zero;
        for j in (0..l).rev() {
            total += m[j].weight * a * recip[l - j];
        }
    }
    total
}

struct Walker<'a> {
    nodes: &'a [Node],
    x: &'a [f64],
    phi: Vec<f64>,
    /// Path of each recursion level, stored one after another.
    buf: Vec<PathElem>,
    recip: Vec<f64>,
}

impl Walker<'_> {
    fn recurse(&mut self, j: usize, parent: usize, parent_len: usize, zero: f64, one: f64, feature: Option<usize>) {
        let off = parent + parent_len;
        self.buf.copy_within(parent..off, off);
        let mut len = parent_len + 1;
        let m = &mut self.buf[off..off + len];
        extend(m, parent_len, zero, one, feature);
        match &self.nodes[j] {
            Node::Leaf { value, .. } => {
                let m = &self.buf[off..off + len];
                for i in 1..len {
                    let w = unwound_sum(m, i, &self.recip);
                    let f = m[i].feature.expect("only the root element lacks a feature");
                    self.phi[f] += w * (m[i].one - m[i].zero) * value;
                }
            }
            Node::Internal { feature: f, threshold, left, right, cover } => {
                let (hot, cold) = if self.x[*f] <= *threshold { (*left, *right) } else { (*right, *left) };
                let (mut iz, mut io) = (1.0, 1.0);
                if let Some(k) = (1..len).find(|&k| self.buf[off + k].feature == Some(*f)) {
                    iz = self.buf[off + k].zero;
                    io = self.buf[off + k].one;
                    unwind(&mut self.buf[off..off + len], len, k);
                    len -= 1;
                }
                let rj = *cover as f64;
                let rh = self.nodes[hot].cover() as f64;
                let rc = self.nodes[cold].cover() as f64;
                self.recurse(hot, off, len, iz * rh / rj, io, Some(*f));
                self.recurse(cold, off, len, iz * rc / rj, 0.0, Some(*f));
            }
        }
    }
}

/// Exact Shapley values of one tree's TMJ1 output in polynomial time.
pub fn tree_shap(tree: &Tree, x: &[f64]) -> Result<Attribution, ExplainError> {
    check(tree, x)?;
    let depth = tree.depth() + 2;
    let empty = PathElem { feature: None, zero: 0.0, one: 0.0, weight: 0.0 };
    let mut w = Walker {
        nodes: tree.nodes(),
        x,
        phi: vec![0.0; x.len()],
        buf: vec![empty; depth * (depth + 1) / 2 + 1],
        recip: (0..=depth + 1).map(|k| if k == 0 { 0.0 } else { 1.0 / k as f64 }).collect(),
    };
    w.recurse(0, 0, 0, 1.0, 1.0, None);
    Ok(Attribution { per_feature: w.phi, base_value: expected_value(tree, x, &|_| false), output: tree.predict(x) })
}

/// Shapley values by enumerating every coalition; exponential in `x.len()`.
pub fn brute_force_shap(tree: &Tree, x: &[f64]) -> Result<Attribution, ExplainError> {
    let d = x.len();
    if d > BRUTE_FORCE_MAX_FEATURES {
        return Err(ExplainError::TooManyFeatures(d));
    }
    check(tree, x)?;
    let values: Vec<f64> = (0u32..1 << d).map(|mask| expected_value(tree, x, &|f| mask & (1 << f) != 0)).collect();
    // weight(|S|) = |S|! (d − |S| − 1)! / d!
    let mut fact = vec![1.0f64; d + 1];
    for i in 1..=d {
        fact[i] = fact[i - 1] * i as f64;
    }
    let mut phi = vec![0.0; d];
    for (i, p) in phi.iter_mut().enumerate() {
        let bit = 1u32 << i;
        for mask in (0u32..1 << d).filter(|m| m & bit == 0) {
            let s = mask.count_ones() as usize;
            let w = fact[s] * fact[d - s - 1] / fact[d];
            *p += w * (values[(mask | bit) as usize] - values[mask as usize]);
        }
    }
    Ok(Attribution { per_feature: phi, base_value: values[0], output: values[(1usize << d) - 1] })
}

/// Mean of per-tree attributions.
pub fn forest_shap(forest: &Forest, x: &[f64]) -> Result<Attribution, ExplainError> {
    let parts = forest.trees.iter().map(|t| tree_shap(t, x)).collect::<Result<Vec<_>, _>>()?;
    Ok(Attribution::mean(&parts))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    pub mean_abs_shap: f64,
    /// 1-based, by descending mean |SHAP|.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryPoint {
    pub feature: String,
    pub row_index: usize,
    pub shap_value: f64,
    pub feature_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryData {
    pub ranking: Vec<FeatureImportance>,
    pub points: Vec<SummaryPoint>,
}

/// Builds the ranking and point cloud from per-row attributions.
pub fn summarize_attributions(
    names: &[String],
    x: &Matrix,
    attributions: &[Attribution],
) -> Result<SummaryData, ExplainError> {
    if attributions.is_empty() {
        return Err(ExplainError::Empty);
    }
    let d = names.len();
    let mut ranking: Vec<FeatureImportance> = (0..d)
        .map(|f| {
            let mut abs: Vec<f64> = attributions.iter().map(|a| libm::fabs(a.per_feature[f])).collect();
            abs.sort_unstable_by(f64::total_cmp);
            FeatureImportance {
                feature: names[f].clone(),
                mean_abs_shap: abs.iter().sum::<f64>() / abs.len() as f64,
                rank: 0,
            }
        })
        .collect();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| ranking[b].mean_abs_shap.total_cmp(&ranking[a].mean_abs_shap).then(a.cmp(&b)));
    for (r, &f) in order.iter().enumerate() {
        ranking[f].rank = r + 1;
    }
    let ranking: Vec<FeatureImportance> = order.iter().map(|&f| ranking[f].clone()).collect();
    let mut points = Vec::with_capacity(d * attributions.len());
    for f in order {
        for (row, a) in attributions.iter().enumerate() {
            points.push(SummaryPoint {
                feature: names[f].clone(),
                row_index: row,
                shap_value: a.per_feature[f],
                feature_value: x.get(row, f),
            });
        }
    }
    Ok(SummaryData { ranking, points })
}

pub fn summarize(forest: &Forest, x: &Matrix) -> Result<SummaryData, ExplainError> {
    let attributions = x.iter_rows().map(|r| forest_shap(forest, r)).collect::<Result<Vec<_>, _>>()?;
    summarize_attributions(&forest.feature_names, x, &attributions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::{ForestHyperparams, FOREST_FORMAT_VERSION};

    const W: [f64; 2] = [1.0, 1.0];

    fn stump(feature: usize, t: f64, l: [u32; 2], r: [u32; 2]) -> Tree {
        Tree::from_nodes(vec![
            Node::Internal { feature, threshold: t, left: 1, right: 2, cover: l[0] + l[1] + r[0] + r[1] },
            Node::leaf(l, W),
            Node::leaf(r, W),
        ])
        .unwrap()
    }

    fn forest(trees: Vec<Tree>, d: usize) -> Forest {
        Forest {
            format_version: FOREST_FORMAT_VERSION,
            trees,
            hyperparams: ForestHyperparams::default(),
            feature_names: (0..d).map(|i| alloc::format!("f{i}")).collect(),
            class_weights: W,
            oob_estimate: None,
        }
    }

    #[test]
    fn constant_tree() {
        let t = Tree::from_nodes(vec![Node::leaf([3, 1], W)]).unwrap();
        let a = tree_shap(&t, &[1.0, 2.0]).unwrap();
        assert_eq!(a.per_feature, vec![0.0, 0.0]);
        assert_eq!(a.base_value, 0.25);
        assert_eq!(brute_force_shap(&t, &[1.0, 2.0]).unwrap().per_feature, vec![0.0, 0.0]);
    }

    #[test]
    fn single_split_closed_form() {
        // left leaf p = 0.2 (cover 10), right leaf p = 0.9 (cover 30)
        let t = stump(1, 0.5, [8, 2], [3, 27]);
        let a = tree_shap(&t, &[7.0, 0.0, 7.0]).unwrap();
        let mean = (10.0 * 0.2 + 30.0 * 0.9) / 40.0;
        assert!((a.per_feature[1] - (0.2 - mean)).abs() < 1e-12);
        assert_eq!(a.per_feature[0], 0.0);
        assert_eq!(a.per_feature[2], 0.0);
        assert!((a.base_value - mean).abs() < 1e-12);
    }

    #[test]
    fn symmetric_features() {
        // f0 then f1 on both sides, with symmetric leaves
        let t = Tree::from_nodes(vec![
            Node::Internal { feature: 0, threshold: 0.0, left: 1, right: 4, cover: 40 },
            Node::Internal { feature: 1, threshold: 0.0, left: 2, right: 3, cover: 20 },
            Node::leaf([10, 0], W),
            Node::leaf([5, 5], W),
            Node::Internal { feature: 1, threshold: 0.0, left: 5, right: 6, cover: 20 },
            Node::leaf([5, 5], W),
            Node::leaf([0, 10], W),
        ])
        .unwrap();
        for x in [[1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]] {
            let a = tree_shap(&t, &x).unwrap();
            let b = brute_force_shap(&t, &x).unwrap();
            if x[0] == x[1] {
                assert!((a.per_feature[0] - a.per_feature[1]).abs() < 1e-12);
            } else {
                assert!((a.per_feature[0] + a.per_feature[1]).abs() < 1e-12);
            }
            for f in 0..2 {
                assert!((a.per_feature[f] - b.per_feature[f]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn repeated_feature_on_path() {
        let t = Tree::from_nodes(vec![
            Node::Internal { feature: 0, threshold: 0.0, left: 1, right: 4, cover: 12 },
            Node::Internal { feature: 0, threshold: -1.0, left: 2, right: 3, cover: 7 },
            Node::leaf([3, 1], W),
            Node::leaf([1, 2], W),
            Node::Internal { feature: 1, threshold: 2.0, left: 5, right: 6, cover: 5 },
            Node::leaf([2, 0], W),
            Node::leaf([0, 3], W),
        ])
        .unwrap();
        for x in [[-0.5, 1.0], [-2.0, 3.0], [1.0, 3.0], [1.0, 0.0]] {
            let a = tree_shap(&t, &x).unwrap();
            let b = brute_force_shap(&t, &x).unwrap();
            for f in 0..2 {
                assert!((a.per_feature[f] - b.per_feature[f]).abs() < 1e-12);
            }
            assert!(a.local_accuracy_gap() < 1e-12);
        }
    }

    #[test]
    fn forest_averaging() {
        let a = stump(0, 0.0, [4, 1], [1, 4]);
        let b = stump(1, 0.0, [2, 2], [0, 5]);
        let x = [1.0, -1.0];
        let one = forest_shap(&forest(vec![a.clone()], 2), &x).unwrap();
        assert_eq!(one, tree_shap(&a, &x).unwrap());
        let twice = forest_shap(&forest(vec![a.clone(), a.clone()], 2), &x).unwrap();
        assert_eq!(twice.per_feature, one.per_feature);
        let f = forest(vec![a.clone(), b.clone()], 2);
        let both = forest_shap(&f, &x).unwrap();
        let (ta, tb) = (tree_shap(&a, &x).unwrap(), tree_shap(&b, &x).unwrap());
        for i in 0..2 {
            assert_eq!(both.per_feature[i], (ta.per_feature[i] + tb.per_feature[i]) / 2.0);
        }
        assert!((both.output - f.predict_proba(&x).unwrap()[1]).abs() < 1e-15);
        assert!(both.local_accuracy_gap() < 1e-12);
    }

    #[test]
    fn guards() {
        let t = stump(0, 0.0, [1, 1], [1, 1]);
        assert_eq!(brute_force_shap(&t, &[0.0; 16]), Err(ExplainError::TooManyFeatures(16)));
        assert_eq!(tree_shap(&stump(3, 0.0, [1, 1], [1, 1]), &[0.0; 2]), Err(ExplainError::Dimension { feature: 3, d: 2 }));
        let zero = Tree::from_nodes(vec![
            Node::Internal { feature: 0, threshold: 0.0, left: 1, right: 2, cover: 2 },
            Node::leaf([0, 0], W),
            Node::leaf([1, 1], W),
        ])
        .unwrap();
        assert_eq!(tree_shap(&zero, &[0.0]), Err(ExplainError::ZeroCover(1)));
    }

    #[test]
    fn summary_ranks_stump_feature_first() {
        let f = forest(vec![stump(2, 0.0, [9, 1], [1, 9])], 3);
        let x = Matrix::from_rows(3, &[[0.0, 0.0, -1.0], [5.0, 1.0, 1.0], [1.0, 2.0, 3.0]]);
        let s = summarize(&f, &x).unwrap();
        assert_eq!(s.ranking[0].feature, "f2");
        assert_eq!(s.ranking[0].rank, 1);
        assert_eq!(s.ranking[1].mean_abs_shap, 0.0);
        assert_eq!(s.points.len(), 9);
        let constant = forest(vec![Tree::from_nodes(vec![Node::leaf([1, 1], W)]).unwrap()], 3);
        assert!(summarize(&constant, &x).unwrap().ranking.iter().all(|r| r.mean_abs_shap == 0.0));
        assert_eq!(summarize(&f, &Matrix::zeros(0, 3)), Err(ExplainError::Empty));
    }
}
