//! One-dimensional entity embeddings for nominal variables.
//!
//! A single-layer logistic model `σ(b + Σ_c w_c · e_c[code])` is fitted by
//! full-batch gradient descent. The reported embedding of a category is the
//! folded product `w_c · e_c[code]`, its contribution to the log-odds, so the
//! ordering of categories follows their association with TMJ1 regardless of
//! the sign the optimizer settles on for `w_c`.

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng as _;

use crate::rng::{self, domain};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbeddingParams {
    pub epochs: usize,
    pub learning_rate: f64,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for EmbeddingParams {
    fn default() -> Self {
        Self { epochs: 200, learning_rate: 0.1, init_scale: 0.01, seed: 0 }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// `codes[row][column]` is the label-encoded category (or `None` when
/// missing); `cardinality[column]` bounds the codes. Returns one embedding
/// per (column, code).
pub fn fit_scalar_embeddings(
    codes: &[Vec<Option<u32>>],
    cardinality: &[usize],
    y: &[f64],
    params: EmbeddingParams,
) -> Vec<Vec<f64>> {
    let n = codes.len();
    let cols = cardinality.len();
    let mut stream = rng::stream(params.seed, domain::EMBEDDING, 0);
    let mut emb: Vec<Vec<f64>> = cardinality
        .iter()
        .map(|&k| (0..k).map(|_| stream.random_range(-params.init_scale..=params.init_scale)).collect())
        .collect();
    let mut w = vec![1.0; cols];
    if n == 0 {
        return emb;
    }
    let rate = (y.iter().sum::<f64>() / n as f64).clamp(1e-6, 1.0 - 1e-6);
    let mut bias = libm::log(rate / (1.0 - rate));
    let inv_n = 1.0 / n as f64;

    let mut g_emb: Vec<Vec<f64>> = cardinality.iter().map(|&k| vec![0.0; k]).collect();
    let mut g_w = vec![0.0; cols];
    for _ in 0..params.epochs {
        g_emb.iter_mut().for_each(|g| g.iter_mut().for_each(|x| *x = 0.0));
        g_w.iter_mut().for_each(|x| *x = 0.0);
        let mut g_b = 0.0;
        for (row, &target) in codes.iter().zip(y) {
            let mut z = bias;
            for (c, code) in row.iter().enumerate() {
                if let Some(k) = code {
                    z += w[c] * emb[c][*k as usize];
                }
            }
            let resid = sigmoid(z) - target;
            g_b += resid;
            for (c, code) in row.iter().enumerate() {
                if let Some(k) = code {
                    let k = *k as usize;
                    g_emb[c][k] += resid * w[c];
                    g_w[c] += resid * emb[c][k];
                }
            }
        }
        bias -= params.learning_rate * g_b * inv_n;
        for c in 0..cols {
            w[c] -= params.learning_rate * g_w[c] * inv_n;
            for k in 0..cardinality[c] {
                emb[c][k] -= params.learning_rate * g_emb[c][k] * inv_n;
            }
        }
    }
    for c in 0..cols {
        for e in emb[c].iter_mut() {
            *e *= w[c];
        }
    }
    emb
}
