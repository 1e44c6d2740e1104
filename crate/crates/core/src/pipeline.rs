//! End-to-end decomposition of a volume into a [`LayerSet`].

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{compose, project_volume, LayerSet};
use crate::manifold::{build_w, PixelProjector, DEFAULT_PIXEL_NEIGHBORS, DEFAULT_SUPERPIXEL_NEIGHBORS};
use crate::palette::{extract_palette, Palette};
use crate::pixel::PixelVolume;
use crate::solver::{
    auto_constraints, solve_layers, ConstraintSet, ConstraintSource, Solution, SolverParams, StrokeDoc, DEFAULT_AUTO_TAU,
};
use crate::superpixel::{segment, Segmentation};

pub const DEFAULT_STILL_SUPERPIXELS: usize = 2000;
pub const DEFAULT_VIDEO_SUPERPIXELS: usize = 4000;
pub const DEFAULT_LAYERS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct DecomposeConfig {
    pub superpixels: usize,
    pub layers: usize,
    pub seed: u64,
    pub params: SolverParams,
    /// Extracted from the volume when absent.
    pub palette: Option<Palette>,
    pub strokes: Option<StrokeDoc>,
    /// Applied only when no stroke maps to a constraint.
    pub auto_constraints: bool,
    pub tau: f64,
    pub superpixel_neighbors: usize,
    pub pixel_neighbors: usize,
}

impl Default for DecomposeConfig {
    fn default() -> Self {
        Self {
            superpixels: DEFAULT_STILL_SUPERPIXELS,
            layers: DEFAULT_LAYERS,
            seed: 0,
            params: SolverParams::default(),
            palette: None,
            strokes: None,
            auto_constraints: true,
            tau: DEFAULT_AUTO_TAU,
            superpixel_neighbors: DEFAULT_SUPERPIXEL_NEIGHBORS,
            pixel_neighbors: DEFAULT_PIXEL_NEIGHBORS,
        }
    }
}

impl DecomposeConfig {
    /// Default configuration with the superpixel count suited to the volume.
    pub fn for_volume(volume: &PixelVolume) -> Self {
        Self {
            superpixels: if volume.frames() > 1 {
                DEFAULT_VIDEO_SUPERPIXELS
            } else {
                DEFAULT_STILL_SUPERPIXELS
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::InvalidParameter("num-layers must be ≥ 1".into()));
        }
        if self.superpixels == 0 {
            return Err(Error::InvalidParameter("superpixels must be ≥ 1".into()));
        }
        if let Some(p) = &self.palette {
            if p.len() != self.layers {
                return Err(Error::InvalidParameter(format!(
                    "palette has {} colors but num-layers is {}",
                    p.len(),
                    self.layers
                )));
            }
        }
        if !(self.tau > 0.0) {
            return Err(Error::InvalidParameter(format!("tau must be positive, got {}", self.tau)));
        }
        if self.superpixel_neighbors == 0 || self.pixel_neighbors == 0 {
            return Err(Error::InvalidParameter("neighbor counts must be ≥ 1".into()));
        }
        self.params.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTime {
    pub stage: String,
    pub ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecomposeReport {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub superpixels: usize,
    pub layers: usize,
    pub seed: u64,
    pub palette: Vec<[f32; 3]>,
    pub timings_ms: Vec<StageTime>,
    pub total_ms: f64,
    /// Root mean squared channel error of the reconstruction.
    pub rmse: f64,
    /// Fraction of superpixel layer values below zero after each solve.
    pub negative_fraction: Vec<f64>,
    /// Count of superpixel layer values below -0.05 after each solve.
    pub significant_negatives: Vec<usize>,
    pub cg_iterations: Vec<usize>,
    pub converged: bool,
    pub user_constraints: usize,
    pub auto_constraints: usize,
}

impl DecomposeReport {
    pub fn push_stage(&mut self, stage: &str, ms: f64) {
        self.timings_ms.push(StageTime {
            stage: stage.to_string(),
            ms,
        });
    }

    pub fn stage_sum_ms(&self) -> f64 {
        self.timings_ms.iter().map(|s| s.ms).sum()
    }
}

#[derive(Debug, Clone)]
pub struct Decomposition {
    pub layers: LayerSet,
    pub segmentation: Segmentation,
    pub solution: Solution,
    pub reconstruction: PixelVolume,
    pub report: DecomposeReport,
}

pub fn rmse(a: &PixelVolume, b: &PixelVolume) -> Result<f64> {
    if a.data().len() != b.data().len() {
        return Err(Error::DimensionMismatch("volumes differ in size".into()));
    }
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum();
    Ok((sum / a.data().len() as f64).sqrt())
}

struct Stopwatch {
    start: Instant,
    lap: Instant,
    stages: Vec<StageTime>,
}

impl Stopwatch {
    fn new() -> Self {
        let now = Instant::now();
        Self {
            start: now,
            lap: now,
            stages: Vec::new(),
        }
    }

    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        let ms = (now - self.lap).as_secs_f64() * 1e3;
        log::info!("{stage}: {ms:.1} ms");
        self.stages.push(StageTime {
            stage: stage.to_string(),
            ms,
        });
        self.lap = now;
    }

    fn total_ms(&self) -> f64 {
        self.start.elapsed().as_secs_f64() * 1e3
    }
}

pub fn decompose(volume: &PixelVolume, config: &DecomposeConfig) -> Result<Decomposition> {
    config.validate()?;
    let mut clock = Stopwatch::new();

    let palette = match &config.palette {
        Some(p) => p.clone(),
        None => extract_palette(volume, config.layers, config.seed).map_err(|e| e.at("palette"))?,
    };
    clock.lap("palette");

    let segmentation = segment(volume, config.superpixels, config.seed).map_err(|e| e.at("segmentation"))?;
    clock.lap("segmentation");

    let w = build_w(
        &segmentation.feature_vectors(),
        &segmentation.mean_colors(),
        config.superpixel_neighbors,
    )
    .map_err(|e| e.at("superpixel_weights"))?;
    clock.lap("superpixel_weights");

    let user = match &config.strokes {
        Some(doc) => doc
            .to_constraints(&segmentation, palette.len())
            .map_err(|e| e.at("constraints"))?,
        None => ConstraintSet::new(),
    };
    // automatic constraints only stand in for missing user guidance
    let constraints = if config.auto_constraints && user.is_empty() {
        auto_constraints(&segmentation, &palette, config.tau).map_err(|e| e.at("constraints"))?
    } else {
        user
    };
    let solution =
        solve_layers(&segmentation, &w, &palette, &constraints, &config.params).map_err(|e| e.at("solve"))?;
    clock.lap("solve");

    let layers = PixelProjector::new(&segmentation, config.pixel_neighbors.min(segmentation.len()))
        .and_then(|projector| project_volume(&projector, volume, &solution.layers))
        .and_then(|planes| LayerSet::new(volume.width(), volume.height(), volume.frames(), palette.clone(), planes))
        .map_err(|e| e.at("projection"))?;
    clock.lap("projection");

    let reconstruction = compose(&layers, &palette).map_err(|e| e.at("reconstruction"))?;
    let error = rmse(&reconstruction, volume).map_err(|e| e.at("reconstruction"))?;
    clock.lap("reconstruction");

    let report = DecomposeReport {
        width: volume.width(),
        height: volume.height(),
        frames: volume.frames(),
        superpixels: segmentation.len(),
        layers: palette.len(),
        seed: config.seed,
        palette: palette.colors().to_vec(),
        timings_ms: clock.stages.clone(),
        total_ms: clock.total_ms(),
        rmse: error,
        negative_fraction: solution.steps.iter().map(|s| s.negative_fraction).collect(),
        significant_negatives: solution.steps.iter().map(|s| s.significant_negative_count).collect(),
        cg_iterations: solution.steps.iter().map(|s| s.cg_iterations).collect(),
        converged: solution.converged(),
        user_constraints: constraints.count(ConstraintSource::User),
        auto_constraints: constraints.count(ConstraintSource::Auto),
    };
    Ok(Decomposition {
        layers,
        segmentation,
        solution,
        reconstruction,
        report,
    })
}
