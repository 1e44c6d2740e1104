//! The quadratic energy over superpixel layer values and its normal equations.
//!
//! Unknowns are ordered layer-major: entry `j * S + s` is the value of layer
//! `j` at superpixel `s`.

use rayon::prelude::*;

use super::constraints::{ConstraintSet, ConstraintSource};
use super::SolverParams;
use crate::error::{Error, Result};
use crate::manifold::SparseRowMatrix;
use crate::palette::Palette;

/// `A x = b` with `A` symmetric positive (semi)definite.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalSystem {
    pub a: SparseRowMatrix,
    pub b: Vec<f64>,
    superpixels: usize,
    layers: usize,
}

impl NormalSystem {
    pub fn superpixels(&self) -> usize {
        self.superpixels
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    /// Adds the soft penalty `weight * (x[index] - target)^2`.
    pub fn add_penalty(&mut self, index: usize, weight: f64, target: f64) {
        let stored = self.a.add_to_stored(index, index, weight);
        debug_assert!(stored, "diagonal is always stored");
        self.b[index] += weight * target;
    }
}

/// The four energy terms, each already scaled by its weight.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnergyTerms {
    pub manifold: f64,
    pub reconstruction: f64,
    pub unity: f64,
    pub constraints: f64,
}

impl EnergyTerms {
    pub fn total(&self) -> f64 {
        self.manifold + self.reconstruction + self.unity + self.constraints
    }
}

fn check_dims(w: &SparseRowMatrix, palette: &Palette, colors: &[[f64; 3]], constraints: &ConstraintSet) -> Result<(usize, usize)> {
    let s = w.rows();
    let n = palette.len();
    if w.cols() != s {
        return Err(Error::DimensionMismatch(format!(
            "weight matrix is {}x{}, expected square",
            w.rows(),
            w.cols()
        )));
    }
    if colors.len() != s {
        return Err(Error::DimensionMismatch(format!(
            "{} superpixel colors for {s} superpixels",
            colors.len()
        )));
    }
    for c in constraints.entries() {
        if c.superpixel >= s || c.layer >= n {
            return Err(Error::DimensionMismatch(format!(
                "constraint on superpixel {} layer {} with {s} superpixels and {n} layers",
                c.superpixel, c.layer
            )));
        }
    }
    Ok((s, n))
}

fn constraint_weight(source: ConstraintSource, params: &SolverParams) -> f64 {
    match source {
        ConstraintSource::User | ConstraintSource::Auto => params.lambda_e,
        ConstraintSource::Suppression => params.lambda_n,
    }
}

/// `(I - W)^T (I - W)` with every diagonal entry stored.
fn manifold_gram(w: &SparseRowMatrix) -> SparseRowMatrix {
    let s = w.rows();
    let rows: Vec<Vec<(usize, f64)>> = (0..s)
        .map(|r| {
            let (idx, vals) = w.row(r);
            let mut row: Vec<(usize, f64)> = idx.iter().zip(vals).map(|(&c, &v)| (c as usize, -v)).collect();
            row.push((r, 1.0));
            row
        })
        .collect();
    let d = SparseRowMatrix::from_rows(s, rows).expect("columns within range");
    let dt = d.transpose();

    let built: Vec<(Vec<u32>, Vec<f64>)> = (0..s)
        .into_par_iter()
        .map_init(
            || (vec![0.0f64; s], vec![false; s], Vec::new()),
            |(acc, seen, touched), a| {
                touched.clear();
                let (rs, dra) = dt.row(a);
                for (&r, &x) in rs.iter().zip(dra) {
                    let (cols, vals) = d.row(r as usize);
                    for (&c, &v) in cols.iter().zip(vals) {
                        let c = c as usize;
                        if !seen[c] {
                            seen[c] = true;
                            touched.push(c as u32);
                        }
                        acc[c] += x * v;
                    }
                }
                if !seen[a] {
                    touched.push(a as u32);
                }
                touched.sort_unstable();
                let vals: Vec<f64> = touched.iter().map(|&c| acc[c as usize]).collect();
                for &c in touched.iter() {
                    acc[c as usize] = 0.0;
                    seen[c as usize] = false;
                }
                (touched.clone(), vals)
            },
        )
        .collect();

    let mut row_ptr = Vec::with_capacity(s + 1);
    row_ptr.push(0);
    let mut indices = Vec::new();
    let mut values = Vec::new();
    for (idx, vals) in built {
        indices.extend(idx);
        values.extend(vals);
        row_ptr.push(indices.len());
    }
    SparseRowMatrix::from_csr(s, s, row_ptr, indices, values)
}

/// Builds `A = λm (I-M)ᵀ(I-M) + λr RᵀR + λu UᵀU + EᵀΛE` and
/// `b = λr RᵀB + λu Uᵀ1 + EᵀΛT`, where `M` repeats `w` on each layer, `R`
/// maps layer values to colors, `U` sums layers, and `Λ` holds `lambda_e` for
/// user and automatic constraints and `lambda_n` for suppression ones.
pub fn assemble_normal_system(
    w: &SparseRowMatrix,
    palette: &Palette,
    colors: &[[f64; 3]],
    constraints: &ConstraintSet,
    params: &SolverParams,
) -> Result<NormalSystem> {
    params.validate()?;
    let (s, n) = check_dims(w, palette, colors, constraints)?;
    let pal = palette.colors_f64();
    let k = manifold_gram(w);

    // coupling between layers j and l at the same superpixel
    let cross = |j: usize, l: usize| -> f64 {
        params.lambda_r * (0..3).map(|d| pal[j][d] * pal[l][d]).sum::<f64>() + params.lambda_u
    };

    let mut row_ptr = Vec::with_capacity(s * n + 1);
    row_ptr.push(0);
    let mut indices = Vec::with_capacity(n * (k.nnz() + s * (n - 1)));
    let mut values = Vec::with_capacity(indices.capacity());
    let mut b = vec![0.0; s * n];
    for j in 0..n {
        for sp in 0..s {
            for l in 0..j {
                indices.push((l * s + sp) as u32);
                values.push(cross(j, l));
            }
            let (cols, vals) = k.row(sp);
            for (&c, &v) in cols.iter().zip(vals) {
                indices.push((j * s) as u32 + c);
                let mut entry = params.lambda_m * v;
                if c as usize == sp {
                    entry += cross(j, j);
                }
                values.push(entry);
            }
            for l in j + 1..n {
                indices.push((l * s + sp) as u32);
                values.push(cross(j, l));
            }
            row_ptr.push(indices.len());
            let proj: f64 = (0..3).map(|d| pal[j][d] * colors[sp][d]).sum();
            b[j * s + sp] = params.lambda_r * proj + params.lambda_u;
        }
    }
    let mut system = NormalSystem {
        a: SparseRowMatrix::from_csr(s * n, s * n, row_ptr, indices, values),
        b,
        superpixels: s,
        layers: n,
    };
    for c in constraints.entries() {
        system.add_penalty(c.layer * s + c.superpixel, constraint_weight(c.source, params), c.target);
    }
    Ok(system)
}

/// Evaluates each weighted term of the energy at `values` (layer-major).
pub fn energy(
    w: &SparseRowMatrix,
    palette: &Palette,
    colors: &[[f64; 3]],
    constraints: &ConstraintSet,
    params: &SolverParams,
    values: &[f64],
) -> Result<EnergyTerms> {
    let (s, n) = check_dims(w, palette, colors, constraints)?;
    if values.len() != s * n {
        return Err(Error::DimensionMismatch(format!(
            "{} layer values for {s} superpixels and {n} layers",
            values.len()
        )));
    }
    let pal = palette.colors_f64();
    let layer = |j: usize| &values[j * s..(j + 1) * s];

    let mut manifold = 0.0;
    for j in 0..n {
        let lj = layer(j);
        let wl = w.mul_vec(lj)?;
        manifold += lj.iter().zip(&wl).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    let mut reconstruction = 0.0;
    let mut unity = 0.0;
    for sp in 0..s {
        let mut rgb = [0.0; 3];
        let mut sum = 0.0;
        for j in 0..n {
            let v = values[j * s + sp];
            sum += v;
            for d in 0..3 {
                rgb[d] += pal[j][d] * v;
            }
        }
        reconstruction += (0..3).map(|d| (rgb[d] - colors[sp][d]).powi(2)).sum::<f64>();
        unity += (sum - 1.0).powi(2);
    }
    let constraints = constraints
        .entries()
        .iter()
        .map(|c| constraint_weight(c.source, params) * (values[c.layer * s + c.superpixel] - c.target).powi(2))
        .sum();
    Ok(EnergyTerms {
        manifold: params.lambda_m * manifold,
        reconstruction: params.lambda_r * reconstruction,
        unity: params.lambda_u * unity,
        constraints,
    })
}
