//! Locally linear embedding weights: the affine (sum-to-one) combination of a
//! neighbor set that best reconstructs a target point.

use crate::error::{Error, Result};

/// Gram regularization relative to its trace.
pub const GRAM_REGULARIZATION: f64 = 1e-3;
/// Absolute regularization when the Gram matrix is zero.
pub const ZERO_TRACE_REGULARIZATION: f64 = 1e-6;

/// Weights `w` minimizing `|target - sum_j w_j * neighbors[j]|^2` subject to
/// `sum_j w_j = 1`. Weights may be negative.
///
/// Solved through the local Gram matrix `G_jk = (target - n_j) . (target - n_k)`
/// regularized by `1e-3 * trace(G)` on the diagonal. A target that coincides
/// exactly with one or more neighbors is reconstructed by those neighbors alone,
/// with equal weights.
pub fn lle_weights<N: AsRef<[f64]>>(target: &[f64], neighbors: &[N]) -> Result<Vec<f64>> {
    if neighbors.is_empty() {
        return Err(Error::InvalidParameter(
            "at least one neighbor is required".into(),
        ));
    }
    let dim = target.len();
    let k = neighbors.len();
    let mut diffs = Vec::with_capacity(k * dim);
    for n in neighbors {
        let n = n.as_ref();
        if n.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "neighbor of dimension {} for a target of dimension {dim}",
                n.len()
            )));
        }
        diffs.extend(n.iter().zip(target).map(|(a, b)| a - b));
    }
    let mut solver = LleSolver::default();
    let mut out = vec![0.0; k];
    solver.solve(&diffs, k, dim, &mut out);
    Ok(out)
}

/// Reusable scratch space for repeated weight solves.
#[derive(Debug, Default, Clone)]
pub struct LleSolver {
    gram: Vec<f64>,
}

impl LleSolver {
    /// `diffs` holds `k` rows of `neighbor - target`, each of length `dim`.
    pub fn solve(&mut self, diffs: &[f64], k: usize, dim: usize, out: &mut [f64]) {
        debug_assert_eq!(diffs.len(), k * dim);
        debug_assert_eq!(out.len(), k);
        let row = |j: usize| &diffs[j * dim..(j + 1) * dim];

        let coincident = (0..k)
            .filter(|&j| row(j).iter().all(|&v| v == 0.0))
            .count();
        if coincident > 0 {
            let w = 1.0 / coincident as f64;
            for (j, o) in out.iter_mut().enumerate() {
                *o = if row(j).iter().all(|&v| v == 0.0) { w } else { 0.0 };
            }
            return;
        }

        self.fill_gram(diffs, k, dim);
        let ok = cholesky_solve_ones(&mut self.gram, k, out);
        if !ok {
            self.fill_gram(diffs, k, dim);
            gauss_solve_ones(&mut self.gram, k, out);
        }
        let sum: f64 = out.iter().sum();
        if sum != 0.0 && sum.is_finite() {
            for o in out.iter_mut() {
                *o /= sum;
            }
        } else {
            out.fill(1.0 / k as f64);
        }
    }

    fn fill_gram(&mut self, diffs: &[f64], k: usize, dim: usize) {
        self.gram.clear();
        self.gram.resize(k * k, 0.0);
        let mut trace = 0.0;
        for a in 0..k {
            let ra = &diffs[a * dim..(a + 1) * dim];
            for b in 0..=a {
                let rb = &diffs[b * dim..(b + 1) * dim];
                let v: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
                self.gram[a * k + b] = v;
                self.gram[b * k + a] = v;
            }
            trace += self.gram[a * k + a];
        }
        let reg = if trace > 0.0 {
            GRAM_REGULARIZATION * trace
        } else {
            ZERO_TRACE_REGULARIZATION
        };
        for a in 0..k {
            self.gram[a * k + a] += reg;
        }
    }
}

/// In-place Cholesky of the symmetric `k x k` matrix, then solves `G w = 1`.
/// Returns false if a pivot is not positive.
fn cholesky_solve_ones(g: &mut [f64], k: usize, out: &mut [f64]) -> bool {
    for j in 0..k {
        let mut d = g[j * k + j];
        for p in 0..j {
            d -= g[j * k + p] * g[j * k + p];
        }
        if d <= 0.0 || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        g[j * k + j] = d;
        for i in j + 1..k {
            let mut s = g[i * k + j];
            for p in 0..j {
                s -= g[i * k + p] * g[j * k + p];
            }
            g[i * k + j] = s / d;
        }
    }
    // forward: L y = 1
    for i in 0..k {
        let mut s = 1.0;
        for p in 0..i {
            s -= g[i * k + p] * out[p];
        }
        out[i] = s / g[i * k + i];
    }
    // backward: L^T w = y
    for i in (0..k).rev() {
        let mut s = out[i];
        for p in i + 1..k {
            s -= g[p * k + i] * out[p];
        }
        out[i] = s / g[i * k + i];
    }
    true
}

fn gauss_solve_ones(g: &mut [f64], k: usize, out: &mut [f64]) {
    out.fill(1.0);
    for col in 0..k {
        let pivot = (col..k)
            .max_by(|&a, &b| g[a * k + col].abs().total_cmp(&g[b * k + col].abs()))
            .unwrap();
        if pivot != col {
            for c in 0..k {
                g.swap(col * k + c, pivot * k + c);
            }
            out.swap(col, pivot);
        }
        let p = g[col * k + col];
        if p == 0.0 {
            continue;
        }
        for r in col + 1..k {
            let f = g[r * k + col] / p;
            for c in col..k {
                g[r * k + c] -= f * g[col * k + c];
            }
            out[r] -= f * out[col];
        }
    }
    for r in (0..k).rev() {
        let mut s = out[r];
        for c in r + 1..k {
            s -= g[r * k + c] * out[c];
        }
        let p = g[r * k + r];
        out[r] = if p != 0.0 { s / p } else { 0.0 };
    }
}
