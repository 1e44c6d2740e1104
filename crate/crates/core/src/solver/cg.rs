//! Preconditioned conjugate gradient for the layer normal equations.
//!
//! The preconditioner inverts, per superpixel, the `N x N` block coupling its
//! layer values. Dot products are summed sequentially so repeated runs agree
//! bit for bit.

use super::system::NormalSystem;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOutcome {
    pub iterations: usize,
    /// `|b - A x| / |b|`, recomputed from scratch at exit.
    pub relative_residual: f64,
    pub converged: bool,
}

/// Inverses of the per-superpixel layer blocks of `A`.
#[derive(Debug, Clone)]
pub struct BlockJacobi {
    superpixels: usize,
    layers: usize,
    /// `superpixels` dense row-major `layers x layers` inverses.
    inverses: Vec<f64>,
}

impl BlockJacobi {
    pub fn new(system: &NormalSystem) -> Self {
        let s = system.superpixels();
        let n = system.layers();
        let mut inverses = vec![0.0; s * n * n];
        let mut block = vec![0.0; n * n];
        for sp in 0..s {
            for j in 0..n {
                for k in 0..n {
                    block[j * n + k] = system.a.get(j * s + sp, k * s + sp);
                }
            }
            let inv = &mut inverses[sp * n * n..(sp + 1) * n * n];
            if !invert_spd(&mut block, n, inv) {
                // fall back to the diagonal, or identity where it vanishes
                inv.fill(0.0);
                for j in 0..n {
                    let d = system.a.get(j * s + sp, j * s + sp);
                    inv[j * n + j] = if d > 0.0 { 1.0 / d } else { 1.0 };
                }
            }
        }
        Self {
            superpixels: s,
            layers: n,
            inverses,
        }
    }

    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        let (s, n) = (self.superpixels, self.layers);
        for sp in 0..s {
            let inv = &self.inverses[sp * n * n..(sp + 1) * n * n];
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += inv[j * n + k] * r[k * s + sp];
                }
                z[j * s + sp] = acc;
            }
        }
    }
}

/// Cholesky-based inverse of a small SPD matrix. `m` is clobbered.
fn invert_spd(m: &mut [f64], n: usize, out: &mut [f64]) -> bool {
    for j in 0..n {
        let mut d = m[j * n + j];
        for p in 0..j {
            d -= m[j * n + p] * m[j * n + p];
        }
        if !(d > 0.0) || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        m[j * n + j] = d;
        for i in j + 1..n {
            let mut s = m[i * n + j];
            for p in 0..j {
                s -= m[i * n + p] * m[j * n + p];
            }
            m[i * n + j] = s / d;
        }
    }
    let mut col = vec![0.0; n];
    for e in 0..n {
        for i in 0..n {
            let mut s = if i == e { 1.0 } else { 0.0 };
            for p in 0..i {
                s -= m[i * n + p] * col[p];
            }
            col[i] = s / m[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = col[i];
            for p in i + 1..n {
                s -= m[p * n + i] * col[p];
            }
            col[i] = s / m[i * n + i];
        }
        for i in 0..n {
            out[i * n + e] = col[i];
        }
    }
    true
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `A x = b` starting from the contents of `x`.
pub fn conjugate_gradient(system: &NormalSystem, x: &mut [f64], tolerance: f64, max_iters: usize) -> CgOutcome {
    const MAX_RESTARTS: usize = 4;
    let a = &system.a;
    let b = &system.b;
    let len = b.len();
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        x.fill(0.0);
        return CgOutcome {
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
        };
    }
    let precond = BlockJacobi::new(system);
    let mut r = vec![0.0; len];
    let mut z = vec![0.0; len];
    let mut p = vec![0.0; len];
    let mut q = vec![0.0; len];
    let mut iterations = 0;

    let true_residual = |x: &[f64], r: &mut [f64], q: &mut [f64]| {
        a.par_mul_vec_into(x, q);
        for i in 0..len {
            r[i] = b[i] - q[i];
        }
        dot(r, r).sqrt() / b_norm
    };

    let mut rel = true_residual(x, &mut r, &mut q);
    for _ in 0..=MAX_RESTARTS {
        if rel <= tolerance || iterations >= max_iters {
            break;
        }
        precond.apply(&r, &mut z);
        p.copy_from_slice(&z);
        let mut rz = dot(&r, &z);
        while iterations < max_iters {
            a.par_mul_vec_into(&p, &mut q);
            let pq = dot(&p, &q);
            if !(pq > 0.0) || !(rz > 0.0) {
                break;
            }
            let alpha = rz / pq;
            for i in 0..len {
                x[i] += alpha * p[i];
                r[i] -= alpha * q[i];
            }
            iterations += 1;
            if dot(&r, &r).sqrt() / b_norm <= tolerance {
                break;
            }
            precond.apply(&r, &mut z);
            let rz_next = dot(&r, &z);
            let beta = rz_next / rz;
            rz = rz_next;
            for i in 0..len {
                p[i] = z[i] + beta * p[i];
            }
        }
        // the recurrence drifts from the true residual; confirm before stopping
        rel = true_residual(x, &mut r, &mut q);
    }
    CgOutcome {
        iterations,
        relative_residual: rel,
        converged: rel <= tolerance,
    }
}
