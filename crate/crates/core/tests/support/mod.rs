//! Generators and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use tmj_core::forest::{Node, Tree};
use tmj_core::rng::Rng as StreamRng;
use tmj_core::{Label, Matrix};

/// Random tree with positive covers; leaves carry uniform-weight frequencies.
pub fn random_tree(r: &mut StreamRng, d: usize, max_depth: usize) -> Tree {
    fn grow(r: &mut StreamRng, d: usize, depth: usize, max_depth: usize, nodes: &mut Vec<Node>) -> (usize, u32) {
        let id = nodes.len();
        if depth < max_depth && (depth == 0 || r.random_bool(0.7)) {
            nodes.push(Node::leaf([1, 0], [1.0, 1.0]));
            let feature = r.random_range(0..d);
            let threshold = (r.random_range(-10..=10) as f64) / 10.0;
            let (left, cl) = grow(r, d, depth + 1, max_depth, nodes);
            let (right, cr) = grow(r, d, depth + 1, max_depth, nodes);
            nodes[id] = Node::Internal { feature, threshold, left, right, cover: cl + cr };
            (id, cl + cr)
        } else {
            let mut counts = [r.random_range(0..20u32), r.random_range(0..20u32)];
            if counts[0] + counts[1] == 0 {
                counts[r.random_range(0..2)] = 1;
            }
            nodes.push(Node::leaf(counts, [1.0, 1.0]));
            (id, counts[0] + counts[1])
        }
    }
    let mut nodes = Vec::new();
    grow(r, d, 0, max_depth, &mut nodes);
    Tree::from_nodes(nodes).expect("generated tree is valid")
}

/// Inputs on the threshold grid hit `x == threshold` regularly.
pub fn random_input(r: &mut StreamRng, d: usize) -> Vec<f64> {
    (0..d).map(|_| (r.random_range(-12..=12) as f64) / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum OracleNode {
    Split { feature: usize, threshold: f64, left: Box<OracleNode>, right: Box<OracleNode> },
    Leaf { counts: [u32; 2] },
}

fn gini(counts: [usize; 2]) -> f64 {
    let n = (counts[0] + counts[1]) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let (p0, p1) = (counts[0] as f64 / n, counts[1] as f64 / n);
    1.0 - p0 * p0 - p1 * p1
}

/// Exhaustive best-Gini-split CART on the given rows (no sampling).
/// Every (feature, midpoint) pair is scored by
/// `G(parent) − n_L/n·G(left) − n_R/n·G(right)`; ties within 1e-12 keep the
/// lowest feature, then the lowest threshold.
pub fn gini_oracle(x: &Matrix, y: &[Label], rows: &[usize], depth: usize, max_depth: Option<usize>) -> OracleNode {
    let mut counts = [0usize; 2];
    for &i in rows {
        counts[y[i].index()] += 1;
    }
    let leaf = OracleNode::Leaf { counts: [counts[0] as u32, counts[1] as u32] };
    if counts[0] == 0 || counts[1] == 0 || rows.len() < 2 || max_depth.is_some_and(|m| depth >= m) {
        return leaf;
    }
    let n = rows.len() as f64;
    let parent = gini(counts);
    let mut best: Option<(f64, usize, f64)> = None;
    for f in 0..x.cols() {
        let mut vals: Vec<f64> = rows.iter().map(|&i| x.get(i, f)).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            let mut l = [0usize; 2];
            let mut rr = [0usize; 2];
            for &i in rows {
                if x.get(i, f) <= t {
                    l[y[i].index()] += 1;
                } else {
                    rr[y[i].index()] += 1;
                }
            }
            let nl = (l[0] + l[1]) as f64;
            let nr = (rr[0] + rr[1]) as f64;
            let dec = parent - nl / n * gini(l) - nr / n * gini(rr);
            let better = match best {
                None => true,
                Some((b, bf, bt)) => dec > b + 1e-12 || ((dec - b).abs() <= 1e-12 && (f, t) < (bf, bt)),
            };
            if better {
                best = Some((dec, f, t));
            }
        }
    }
    match best {
        Some((dec, feature, threshold)) if dec > 1e-12 => {
            let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x.get(i, feature) <= threshold);
            OracleNode::Split {
                feature,
                threshold,
                left: Box::new(gini_oracle(x, y, &l, depth + 1, max_depth)),
                right: Box::new(gini_oracle(x, y, &r, depth + 1, max_depth)),
            }
        }
        _ => leaf,
    }
}

/// Structural equality of a fitted tree with an oracle tree.
pub fn matches_oracle(tree: &Tree, i: usize, o: &OracleNode) -> bool {
    match (&tree.nodes()[i], o) {
        (Node::Leaf { counts, .. }, OracleNode::Leaf { counts: oc }) => counts == oc,
        (
            Node::Internal { feature, threshold, left, right, .. },
            OracleNode::Split { feature: of, threshold: ot, left: ol, right: or },
        ) => {
            feature == of
                && threshold == ot
                && matches_oracle(tree, *left, ol)
                && matches_oracle(tree, *right, or)
        }
        _ => false,
    }
}

/// Small integer-valued instance with frequent ties.
pub fn small_instance(r: &mut StreamRng) -> (Matrix, Vec<Label>) {
    let n = r.random_range(2..=12);
    let d = r.random_range(1..=3);
    let levels = r.random_range(2..=5);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| r.random_range(0..levels) as f64).collect()).collect();
    let y = (0..n).map(|_| Label::from_bool(r.random_bool(0.5))).collect();
    (Matrix::from_rows(d, &rows), y)
}
