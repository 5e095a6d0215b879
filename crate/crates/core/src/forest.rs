//! Random forest of CART trees for the binary TMJ label.
//!
//! Trees are grown on bootstrap resamples with Gini impurity, a random subset
//! of candidate features per node and midpoint thresholds. The forest's
//! probability is the unweighted mean of per-tree leaf class frequencies.
//!
//! Every tree draws from its own stream derived from `(seed, tree_index)`,
//! so trees may be grown in any order or in parallel (see
//! [`fit_tree`] / [`Forest::assemble`]) with identical results.

use alloc::string::String;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::Label;
use crate::matrix::Matrix;
use crate::rng::{self, domain};

pub const FOREST_FORMAT_VERSION: u32 = 1;

/// Splits whose impurity decrease is within this of the best are ties.
pub const SPLIT_TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeaturesPerSplit {
    Sqrt,
    Log2,
    All,
    Fixed(usize),
}

impl FeaturesPerSplit {
    pub fn resolve(self, d: usize) -> usize {
        let k = match self {
            FeaturesPerSplit::Sqrt => libm::sqrt(d as f64) as usize,
            FeaturesPerSplit::Log2 => libm::log2(d as f64) as usize,
            FeaturesPerSplit::All => d,
            FeaturesPerSplit::Fixed(k) => k,
        };
        k.clamp(1, d.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeight {
    Uniform,
    Balanced,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestHyperparams {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub min_samples_split: usize,
    pub features_per_split: FeaturesPerSplit,
    pub bootstrap: bool,
    pub seed: u64,
    pub class_weight: ClassWeight,
}

impl Default for ForestHyperparams {
    fn default() -> Self {
        Self {
            n_trees: 500,
            max_depth: None,
            min_samples_leaf: 1,
            min_samples_split: 2,
            features_per_split: FeaturesPerSplit::Sqrt,
            bootstrap: true,
            seed: 0,
            class_weight: ClassWeight::Uniform,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForestError {
    #[error("empty training set")]
    Empty,
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("expected {expected} features, got {found}")]
    Dimension { expected: usize, found: usize },
    #[error("{x} rows but {y} labels")]
    Length { x: usize, y: usize },
    #[error("invalid hyperparameters: {0}")]
    Hyperparams(&'static str),
    #[error("malformed tree: {0}")]
    Malformed(&'static str),
    #[error("unsupported forest format version {0}")]
    Version(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    Internal { feature: usize, threshold: f64, left: usize, right: usize, cover: u32 },
    /// `value` is the (class-weighted) TMJ1 frequency among `counts`.
    Leaf { counts: [u32; 2], cover: u32, value: f64 },
}

impl Node {
    pub fn cover(&self) -> u32 {
        match self {
            Node::Internal { cover, .. } | Node::Leaf { cover, .. } => *cover,
        }
    }

    /// Leaf node from class counts under the given class weights.
    pub fn leaf(counts: [u32; 2], weights: [f64; 2]) -> Node {
        let w0 = counts[0] as f64 * weights[0];
        let w1 = counts[1] as f64 * weights[1];
        let value = if w0 + w1 > 0.0 { w1 / (w0 + w1) } else { 0.0 };
        Node::Leaf { counts, cover: counts[0] + counts[1], value }
    }
}

/// Flat tree; node 0 is the root, children always follow their parent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    /// Validates structure: child indices in range and after the parent,
    /// covers consistent, thresholds finite, every node reachable once.
    pub fn from_nodes(nodes: Vec<Node>) -> Result<Tree, ForestError> {
        if nodes.is_empty() {
            return Err(ForestError::Malformed("no nodes"));
        }
        let mut parents = alloc::vec![0u32; nodes.len()];
        for (i, n) in nodes.iter().enumerate() {
            match n {
                Node::Internal { threshold, left, right, cover, .. } => {
                    if !threshold.is_finite() {
                        return Err(ForestError::Malformed("non-finite threshold"));
                    }
                    if *left <= i || *right <= i || *left >= nodes.len() || *right >= nodes.len() || left == right {
                        return Err(ForestError::Malformed("bad child index"));
                    }
                    if nodes[*left].cover() as u64 + nodes[*right].cover() as u64 != *cover as u64 {
                        return Err(ForestError::Malformed("cover mismatch"));
                    }
                    parents[*left] += 1;
                    parents[*right] += 1;
                }
                Node::Leaf { counts, cover, value } => {
                    if counts[0] as u64 + counts[1] as u64 != *cover as u64 {
                        return Err(ForestError::Malformed("leaf counts do not sum to cover"));
                    }
                    if !(0.0..=1.0).contains(value) {
                        return Err(ForestError::Malformed("leaf value outside [0,1]"));
                    }
                }
            }
        }
        if parents[0] != 0 || parents[1..].iter().any(|&p| p != 1) {
            return Err(ForestError::Malformed("nodes not a tree"));
        }
        Ok(Tree { nodes })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    /// TMJ1 probability of the leaf reached by `x`.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Internal { feature, threshold, left, right, .. } => {
                    i = if x[*feature] <= *threshold { *left } else { *right };
                }
                Node::Leaf { value, .. } => return *value,
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn rec(t: &Tree, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Internal { left, right, .. } => 1 + rec(t, *left).max(rec(t, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        rec(self, 0)
    }

    pub fn max_feature(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Internal { feature, .. } => Some(*feature),
                _ => None,
            })
            .max()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub format_version: u32,
    pub trees: Vec<Tree>,
    pub hyperparams: ForestHyperparams,
    pub feature_names: Vec<String>,
    pub class_weights: [f64; 2],
    pub oob_estimate: Option<f64>,
}

fn check_input(x: &Matrix, y: &[Label]) -> Result<(), ForestError> {
    if x.rows() != y.len() {
        return Err(ForestError::Length { x: x.rows(), y: y.len() });
    }
    if x.rows() == 0 {
        return Err(ForestError::Empty);
    }
    for r in 0..x.rows() {
        for (c, v) in x.row(r).iter().enumerate() {
            if !v.is_finite() {
                return Err(ForestError::NonFinite { row: r, col: c });
            }
        }
    }
    Ok(())
}

fn check_hyperparams(hp: &ForestHyperparams) -> Result<(), ForestError> {
    if hp.n_trees == 0 {
        return Err(ForestError::Hyperparams("n_trees must be at least 1"));
    }
    if hp.min_samples_leaf == 0 {
        return Err(ForestError::Hyperparams("min_samples_leaf must be at least 1"));
    }
    if hp.features_per_split == FeaturesPerSplit::Fixed(0) {
        return Err(ForestError::Hyperparams("features_per_split must be at least 1"));
    }
    Ok(())
}

pub fn class_weights(y: &[Label], mode: ClassWeight) -> [f64; 2] {
    match mode {
        ClassWeight::Uniform => [1.0, 1.0],
        ClassWeight::Balanced => {
            let n1 = y.iter().filter(|l| **l == Label::Tmj1).count();
            let n0 = y.len() - n1;
            let w = |n: usize| if n == 0 { 1.0 } else { y.len() as f64 / (2.0 * n as f64) };
            [w(n0), w(n1)]
        }
    }
}

/// Row indices drawn for tree `t` (with repetition under bootstrap).
pub fn tree_sample(n: usize, hp: &ForestHyperparams, t: usize) -> Vec<usize> {
    if hp.bootstrap {
        let mut r = rng::stream(hp.seed, domain::TREE, 2 * t as u64 + 1);
        (0..n).map(|_| r.random_range(0..n)).collect()
    } else {
        (0..n).collect()
    }
}

#[derive(Clone, Copy)]
struct Candidate {
    decrease: f64,
    feature: usize,
    threshold: f64,
}

impl Candidate {
    /// Larger decrease wins; ties prefer the lower feature, then threshold.
    fn beats(&self, other: &Option<Candidate>) -> bool {
        match other {
            None => true,
            Some(o) => {
                if self.decrease > o.decrease + SPLIT_TIE_TOLERANCE {
                    true
                } else if self.decrease < o.decrease - SPLIT_TIE_TOLERANCE {
                    false
                } else {
                    (self.feature, self.threshold) < (o.feature, o.threshold)
                        || (self.feature == o.feature && self.threshold < o.threshold)
                }
            }
        }
    }
}

struct Builder<'a> {
    x: &'a Matrix,
    y: &'a [Label],
    hp: &'a ForestHyperparams,
    weights: [f64; 2],
    mtry: usize,
    rng: rng::Rng,
    nodes: Vec<Node>,
    scratch: Vec<(f64, usize)>,
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m >= b {
        a
    } else {
        m
    }
}

impl Builder<'_> {
    fn weighted(&self, counts: [u32; 2]) -> [f64; 2] {
        [counts[0] as f64 * self.weights[0], counts[1] as f64 * self.weights[1]]
    }

    fn counts(&self, idx: &[usize]) -> [u32; 2] {
        let mut c = [0u32; 2];
        for &i in idx {
            c[self.y[i].index()] += 1;
        }
        c
    }

    /// Best threshold on one feature, or `None` if the feature is constant
    /// (second element reports whether any two values differ).
    fn best_on_feature(&mut self, idx: &[usize], f: usize, total: [u32; 2]) -> (Option<Candidate>, bool) {
        self.scratch.clear();
        self.scratch.extend(idx.iter().map(|&i| (self.x.get(i, f), i)));
        self.scratch.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        let n = self.scratch.len();
        if self.scratch[0].0 == self.scratch[n - 1].0 {
            return (None, false);
        }
        let wt = self.weighted(total);
        let nt = wt[0] + wt[1];
        let parent = (wt[0] * wt[0] + wt[1] * wt[1]) / nt;
        let min_leaf = self.hp.min_samples_leaf;
        let mut left = [0u32; 2];
        let mut best: Option<Candidate> = None;
        for k in 0..n - 1 {
            let (v, i) = self.scratch[k];
            left[self.y[i].index()] += 1;
            let next = self.scratch[k + 1].0;
            if next == v {
                continue;
            }
            let nl = k + 1;
            if nl < min_leaf || n - nl < min_leaf {
                continue;
            }
            let wl = self.weighted(left);
            let right = [total[0] - left[0], total[1] - left[1]];
            let wr = self.weighted(right);
            let sl = wl[0] + wl[1];
            let sr = wr[0] + wr[1];
            if sl <= 0.0 || sr <= 0.0 {
                continue;
            }
            let score = (wl[0] * wl[0] + wl[1] * wl[1]) / sl + (wr[0] * wr[0] + wr[1] * wr[1]) / sr;
            let cand = Candidate { decrease: (score - parent) / nt, feature: f, threshold: midpoint(v, next) };
            if cand.beats(&best) {
                best = Some(cand);
            }
        }
        (best, true)
    }

    fn find_split(&mut self, idx: &[usize], total: [u32; 2]) -> Option<Candidate> {
        let d = self.x.cols();
        let mut order: Vec<usize> = (0..d).collect();
        if self.mtry < d {
            order.shuffle(&mut self.rng);
        }
        let mut best: Option<Candidate> = None;
        let mut visited = 0;
        for f in order {
            if visited >= self.mtry {
                break;
            }
            let (cand, varies) = self.best_on_feature(idx, f, total);
            if varies {
                visited += 1;
            }
            if let Some(c) = cand {
                if c.beats(&best) {
                    best = Some(c);
                }
            }
        }
        best.filter(|c| c.decrease > SPLIT_TIE_TOLERANCE)
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        let total = self.counts(&idx);
        let leaf = Node::leaf(total, self.weights);
        let n = idx.len();
        let pure = total[0] == 0 || total[1] == 0;
        let depth_cap = self.hp.max_depth.is_some_and(|m| depth >= m);
        if pure || depth_cap || n < self.hp.min_samples_split.max(2) || n < 2 * self.hp.min_samples_leaf {
            self.nodes.push(leaf);
            return id;
        }
        let Some(split) = self.find_split(&idx, total) else {
            self.nodes.push(leaf);
            return id;
        };
        self.nodes.push(leaf); // placeholder, replaced below
        let (l, r): (Vec<usize>, Vec<usize>) =
            idx.into_iter().partition(|&i| self.x.get(i, split.feature) <= split.threshold);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[id] = Node::Internal {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
            cover: n as u32,
        };
        id
    }
}

/// Grows tree `t` of a forest; independent of every other tree.
pub fn fit_tree(x: &Matrix, y: &[Label], hp: &ForestHyperparams, weights: [f64; 2], t: usize) -> Tree {
    let sample = tree_sample(x.rows(), hp, t);
    let mut b = Builder {
        x,
        y,
        hp,
        weights,
        mtry: hp.features_per_split.resolve(x.cols()),
        rng: rng::stream(hp.seed, domain::TREE, 2 * t as u64),
        nodes: Vec::new(),
        scratch: Vec::with_capacity(sample.len()),
    };
    b.grow(sample, 0);
    Tree { nodes: b.nodes }
}

/// Validates inputs and returns the class weights the trees must use.
pub fn prepare_fit(x: &Matrix, y: &[Label], hp: &ForestHyperparams) -> Result<[f64; 2], ForestError> {
    check_hyperparams(hp)?;
    check_input(x, y)?;
    Ok(class_weights(y, hp.class_weight))
}

/// Fits all trees sequentially.
pub fn fit(x: &Matrix, y: &[Label], hp: &ForestHyperparams, feature_names: Vec<String>) -> Result<Forest, ForestError> {
    let weights = prepare_fit(x, y, hp)?;
    let trees = (0..hp.n_trees).map(|t| fit_tree(x, y, hp, weights, t)).collect();
    Ok(Forest::assemble(trees, x, y, hp, weights, feature_names))
}

impl Forest {
    /// Builds the forest from trees grown by [`fit_tree`] in index order and
    /// computes the out-of-bag accuracy when bootstrapping.
    pub fn assemble(
        trees: Vec<Tree>,
        x: &Matrix,
        y: &[Label],
        hp: &ForestHyperparams,
        class_weights: [f64; 2],
        feature_names: Vec<String>,
    ) -> Forest {
        let oob_estimate = if hp.bootstrap { oob_accuracy(&trees, x, y, hp) } else { None };
        Forest {
            format_version: FOREST_FORMAT_VERSION,
            trees,
            hyperparams: *hp,
            feature_names,
            class_weights,
            oob_estimate,
        }
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn validate(&self) -> Result<(), ForestError> {
        if self.format_version != FOREST_FORMAT_VERSION {
            return Err(ForestError::Version(self.format_version));
        }
        if self.trees.is_empty() {
            return Err(ForestError::Malformed("no trees"));
        }
        for t in &self.trees {
            Tree::from_nodes(t.nodes.clone())?;
            if t.max_feature().is_some_and(|f| f >= self.n_features()) {
                return Err(ForestError::Malformed("feature index out of range"));
            }
        }
        Ok(())
    }

    /// `(p0, p1)`: mean of per-tree leaf frequencies.
    pub fn predict_proba(&self, x: &[f64]) -> Result<[f64; 2], ForestError> {
        if x.len() != self.n_features() {
            return Err(ForestError::Dimension { expected: self.n_features(), found: x.len() });
        }
        if let Some(col) = x.iter().position(|v| !v.is_finite()) {
            return Err(ForestError::NonFinite { row: 0, col });
        }
        let p1 = self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64;
        Ok([1.0 - p1, p1])
    }

    pub fn predict(&self, x: &[f64]) -> Result<Label, ForestError> {
        self.predict_proba(x).map(argmax)
    }
}

/// Argmax with ties going to TMJ0.
pub fn argmax(p: [f64; 2]) -> Label {
    if p[1] > p[0] {
        Label::Tmj1
    } else {
        Label::Tmj0
    }
}

fn oob_accuracy(trees: &[Tree], x: &Matrix, y: &[Label], hp: &ForestHyperparams) -> Option<f64> {
    let n = x.rows();
    let mut sum = alloc::vec![0.0f64; n];
    let mut cnt = alloc::vec![0u32; n];
    for (t, tree) in trees.iter().enumerate() {
        let mut inbag = alloc::vec![false; n];
        for i in tree_sample(n, hp, t) {
            inbag[i] = true;
        }
        for i in (0..n).filter(|&i| !inbag[i]) {
            sum[i] += tree.predict(x.row(i));
            cnt[i] += 1;
        }
    }
    let (mut hit, mut total) = (0usize, 0usize);
    for i in 0..n {
        if cnt[i] > 0 {
            let p1 = sum[i] / cnt[i] as f64;
            total += 1;
            if argmax([1.0 - p1, p1]) == y[i] {
                hit += 1;
            }
        }
    }
    (total > 0).then(|| hit as f64 / total as f64)
}
