//! Per-superpixel layer values from the quadratic energy, with iterative
//! suppression of negative values.

mod cg;
mod constraints;
mod system;

use serde::{Deserialize, Serialize};

pub use cg::{conjugate_gradient, BlockJacobi, CgOutcome};
pub use constraints::{
    auto_constraints, parse_constraints, Constraint, ConstraintSet, ConstraintSource, Stroke, StrokeDoc,
    DEFAULT_AUTO_TAU,
};
pub use system::{assemble_normal_system, energy, EnergyTerms, NormalSystem};

use crate::error::{Error, Result};
use crate::manifold::SparseRowMatrix;
use crate::palette::Palette;
use crate::superpixel::Segmentation;

/// Values below this count as significantly negative in solve reports.
pub const NEGATIVE_REPORT_THRESHOLD: f64 = -0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverParams {
    pub lambda_m: f64,
    pub lambda_r: f64,
    pub lambda_u: f64,
    pub lambda_e: f64,
    pub lambda_n: f64,
    pub suppression_iters: usize,
    pub cg_tolerance: f64,
    /// Defaults to `10 * S * N` when unset.
    pub cg_max_iters: Option<usize>,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            lambda_m: 1.0,
            lambda_r: 0.5,
            lambda_u: 0.1,
            lambda_e: 0.1,
            lambda_n: 1.0,
            suppression_iters: 4,
            cg_tolerance: 1e-8,
            cg_max_iters: None,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("lambda_m", self.lambda_m),
            ("lambda_r", self.lambda_r),
            ("lambda_u", self.lambda_u),
            ("lambda_e", self.lambda_e),
            ("lambda_n", self.lambda_n),
        ];
        for (name, v) in weights {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        if self.suppression_iters == 0 {
            return Err(Error::InvalidParameter("suppression_iters must be >= 1".into()));
        }
        if !(self.cg_tolerance > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "cg_tolerance must be positive, got {}",
                self.cg_tolerance
            )));
        }
        Ok(())
    }

    pub fn max_iters_for(&self, unknowns: usize) -> usize {
        self.cg_max_iters.unwrap_or(10 * unknowns)
    }
}

/// Layer values per superpixel, layer-major: `values[j * S + s]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperpixelLayers {
    superpixels: usize,
    layers: usize,
    values: Vec<f64>,
}

impl SuperpixelLayers {
    pub fn new(superpixels: usize, layers: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != superpixels * layers {
            return Err(Error::DimensionMismatch(format!(
                "{} values for {superpixels} superpixels and {layers} layers",
                values.len()
            )));
        }
        Ok(Self {
            superpixels,
            layers,
            values,
        })
    }

    /// Every superpixel split evenly across layers.
    pub fn uniform(superpixels: usize, layers: usize) -> Self {
        Self {
            superpixels,
            layers,
            values: vec![1.0 / layers as f64; superpixels * layers],
        }
    }

    pub fn superpixels(&self) -> usize {
        self.superpixels
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn layer(&self, j: usize) -> &[f64] {
        &self.values[j * self.superpixels..(j + 1) * self.superpixels]
    }

    pub fn get(&self, superpixel: usize, layer: usize) -> f64 {
        self.values[layer * self.superpixels + superpixel]
    }

    pub fn count_below(&self, threshold: f64) -> usize {
        self.values.iter().filter(|&&v| v < threshold).count()
    }
}

/// One solve of the suppression schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuppressionStep {
    pub cg_iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
    /// Entries strictly below zero after this solve.
    pub negative_count: usize,
    pub negative_fraction: f64,
    /// Entries below [`NEGATIVE_REPORT_THRESHOLD`] after this solve.
    pub significant_negative_count: usize,
    /// Layer-major indices that received a suppression constraint before
    /// this solve.
    pub suppressed_before: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub layers: SuperpixelLayers,
    pub steps: Vec<SuppressionStep>,
    /// Input constraints plus all suppression constraints that were added.
    pub constraints: ConstraintSet,
}

impl Solution {
    /// False if any solve stopped before reaching the tolerance; the values
    /// are still the best available.
    pub fn converged(&self) -> bool {
        self.steps.iter().all(|s| s.converged)
    }
}

/// Solves for the superpixel layers of `segmentation`.
pub fn solve_layers(
    segmentation: &Segmentation,
    w: &SparseRowMatrix,
    palette: &Palette,
    constraints: &ConstraintSet,
    params: &SolverParams,
) -> Result<Solution> {
    solve_system(w, palette, &segmentation.mean_colors(), constraints, params)
}

/// Runs `suppression_iters` solves. After each one, every entry strictly below
/// zero that is not yet suppressed gains a soft zero target of weight
/// `lambda_n` for the remaining solves. Each solve starts from the previous
/// solution. Values are not clamped.
pub fn solve_system(
    w: &SparseRowMatrix,
    palette: &Palette,
    colors: &[[f64; 3]],
    constraints: &ConstraintSet,
    params: &SolverParams,
) -> Result<Solution> {
    let mut system = assemble_normal_system(w, palette, colors, constraints, params)?;
    let (s, n) = (system.superpixels(), system.layers());
    let unknowns = s * n;
    let max_iters = params.max_iters_for(unknowns);
    let mut all = constraints.clone();
    let mut x = vec![1.0 / n as f64; unknowns];
    let mut steps: Vec<SuppressionStep> = Vec::with_capacity(params.suppression_iters);
    let mut pending: Vec<usize> = Vec::new();

    for iter in 0..params.suppression_iters {
        for &idx in &pending {
            system.add_penalty(idx, params.lambda_n, 0.0);
        }
        let outcome = conjugate_gradient(&system, &mut x, params.cg_tolerance, max_iters);
        if !outcome.converged {
            log::warn!(
                "solve {} stopped at relative residual {:.3e} after {} iterations",
                iter + 1,
                outcome.relative_residual,
                outcome.iterations
            );
        }
        let negative_count = x.iter().filter(|&&v| v < 0.0).count();
        steps.push(SuppressionStep {
            cg_iterations: outcome.iterations,
            relative_residual: outcome.relative_residual,
            converged: outcome.converged,
            negative_count,
            negative_fraction: negative_count as f64 / unknowns as f64,
            significant_negative_count: x.iter().filter(|&&v| v < NEGATIVE_REPORT_THRESHOLD).count(),
            suppressed_before: std::mem::take(&mut pending),
        });
        for (idx, &v) in x.iter().enumerate() {
            let (layer, superpixel) = (idx / s, idx % s);
            if v < 0.0 && !all.contains(superpixel, layer, ConstraintSource::Suppression) {
                all.insert(Constraint {
                    superpixel,
                    layer,
                    target: 0.0,
                    source: ConstraintSource::Suppression,
                })?;
                pending.push(idx);
            }
        }
    }
    Ok(Solution {
        layers: SuperpixelLayers::new(s, n, x)?,
        steps,
        constraints: all,
    })
}
