use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::palette::Palette;
use crate::pixel::PixelCoord;
use crate::superpixel::Segmentation;

/// Default RGB distance under which a superpixel is pinned to a palette color.
pub const DEFAULT_AUTO_TAU: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintSource {
    User,
    Auto,
    Suppression,
}

/// Soft target for one superpixel's contribution to one layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub superpixel: usize,
    pub layer: usize,
    pub target: f64,
    pub source: ConstraintSource,
}

/// Constraints unique per `(superpixel, layer, source)`; insertion order kept.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConstraintSet {
    entries: Vec<Constraint>,
    slots: HashMap<(usize, usize, ConstraintSource), usize>,
}

impl ConstraintSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a constraint, replacing the value of an existing entry with the
    /// same superpixel, layer and source.
    pub fn insert(&mut self, c: Constraint) -> Result<()> {
        if !(0.0..=1.0).contains(&c.target) {
            return Err(Error::ValueOutOfRange(c.target));
        }
        match self.slots.get(&(c.superpixel, c.layer, c.source)) {
            Some(&slot) => self.entries[slot].target = c.target,
            None => {
                self.slots
                    .insert((c.superpixel, c.layer, c.source), self.entries.len());
                self.entries.push(c);
            }
        }
        Ok(())
    }

    pub fn entries(&self) -> &[Constraint] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, superpixel: usize, layer: usize, source: ConstraintSource) -> bool {
        self.slots.contains_key(&(superpixel, layer, source))
    }

    pub fn count(&self, source: ConstraintSource) -> usize {
        self.entries.iter().filter(|c| c.source == source).count()
    }
}

/// For each superpixel within `tau` of exactly one palette color: target 1 on
/// that layer and 0 on every other layer.
pub fn auto_constraints(segmentation: &Segmentation, palette: &Palette, tau: f64) -> Result<ConstraintSet> {
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter(format!("tau must be positive, got {tau}")));
    }
    let colors = palette.colors_f64();
    let mut set = ConstraintSet::new();
    for (s, sp) in segmentation.superpixels().iter().enumerate() {
        let close: Vec<usize> = colors
            .iter()
            .enumerate()
            .filter(|(_, c)| {
                let d2: f64 = (0..3).map(|d| (sp.mean_color[d] - c[d]).powi(2)).sum();
                d2.sqrt() < tau
            })
            .map(|(j, _)| j)
            .collect();
        if let [only] = close[..] {
            for layer in 0..colors.len() {
                set.insert(Constraint {
                    superpixel: s,
                    layer,
                    target: if layer == only { 1.0 } else { 0.0 },
                    source: ConstraintSource::Auto,
                })?;
            }
        }
    }
    Ok(set)
}

/// Constraint scribbles: `{"strokes": [{"x", "y", "t", "layer", "value"}, ...]}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StrokeDoc {
    pub strokes: Vec<Stroke>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stroke {
    pub x: i64,
    pub y: i64,
    #[serde(default)]
    pub t: i64,
    pub layer: usize,
    pub value: f64,
}

impl StrokeDoc {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Checks every point against the volume extent, the layer count and the
    /// value range.
    pub fn validate(&self, dims: (usize, usize, usize), layers: usize) -> Result<()> {
        let (width, height, frames) = dims;
        let inside = |v: i64, extent: usize| v >= 0 && (v as usize) < extent;
        for s in &self.strokes {
            if !(inside(s.x, width) && inside(s.y, height) && inside(s.t, frames)) {
                return Err(Error::OutOfBounds {
                    x: s.x,
                    y: s.y,
                    t: s.t,
                    width,
                    height,
                    frames,
                });
            }
            if s.layer >= layers {
                return Err(Error::LayerOutOfRange {
                    layer: s.layer,
                    layers,
                });
            }
            if !(0.0..=1.0).contains(&s.value) {
                return Err(Error::ValueOutOfRange(s.value));
            }
        }
        Ok(())
    }

    /// Maps scribble points to the superpixels containing them. Repeated
    /// `(superpixel, layer)` pairs keep the last listed value.
    pub fn to_constraints(&self, segmentation: &Segmentation, layers: usize) -> Result<ConstraintSet> {
        self.validate(segmentation.dims(), layers)?;
        let mut set = ConstraintSet::new();
        for s in &self.strokes {
            let superpixel = segmentation.label_at(PixelCoord {
                x: s.x as usize,
                y: s.y as usize,
                t: s.t as usize,
            }) as usize;
            set.insert(Constraint {
                superpixel,
                layer: s.layer,
                target: s.value,
                source: ConstraintSource::User,
            })?;
        }
        Ok(set)
    }
}

pub fn parse_constraints(path: &Path, segmentation: &Segmentation, layers: usize) -> Result<ConstraintSet> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    StrokeDoc::from_json(&text)?.to_constraints(segmentation, layers)
}
