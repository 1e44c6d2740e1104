//! Command implementations behind the `layerbuild` binary.

pub mod args;
pub mod commands;
pub mod serve;

use layerbuild::layers::LayerSet;
use layerbuild::Error;
use serde::Serialize;

/// A problem with how the tool was invoked rather than with the data.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

/// True for errors caused by bad arguments or inputs that the caller can fix
/// by changing the invocation, as opposed to I/O or internal failures.
pub fn is_config_error(err: &Error) -> bool {
    matches!(
        err.root(),
        Error::InvalidParameter(_)
            | Error::DimensionMismatch(_)
            | Error::LayerOutOfRange { .. }
            | Error::ValueOutOfRange(_)
            | Error::OutOfBounds { .. }
            | Error::Json(_)
            | Error::ChannelOutOfRange(_)
            | Error::EmptyPalette
            | Error::DuplicateColor(..)
            | Error::TooFewColors { .. }
            | Error::SuperpixelCount { .. }
            | Error::NeighborCount { .. }
    )
}

/// 2 for usage and configuration errors, 1 for everything else.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<Error>() {
        Some(e) if is_config_error(e) => 2,
        _ => 1,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PlaneStats {
    pub layer: usize,
    pub min: f32,
    pub max: f32,
    pub mean: f64,
    pub below_zero: f64,
    pub above_one: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LayerMeta {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub layers: usize,
    pub palette: Vec<[f32; 3]>,
    pub planes: Vec<PlaneStats>,
}

pub fn layer_meta(set: &LayerSet) -> LayerMeta {
    let planes = set
        .planes()
        .iter()
        .enumerate()
        .map(|(layer, plane)| {
            let n = plane.len().max(1) as f64;
            let (mut min, mut max, mut sum) = (f32::INFINITY, f32::NEG_INFINITY, 0.0f64);
            let (mut below, mut above) = (0usize, 0usize);
            for &v in plane {
                min = min.min(v);
                max = max.max(v);
                sum += v as f64;
                below += (v < 0.0) as usize;
                above += (v > 1.0) as usize;
            }
            PlaneStats {
                layer,
                min,
                max,
                mean: sum / n,
                below_zero: below as f64 / n,
                above_one: above as f64 / n,
            }
        })
        .collect();
    LayerMeta {
        width: set.width(),
        height: set.height(),
        frames: set.frames(),
        layers: set.num_layers(),
        palette: set.palette().colors().to_vec(),
        planes,
    }
}

/// Grayscale rendering of one weight plane, 0 black and 1 white. With
/// `tint`, values below 0 are drawn red and values above 1 green.
pub fn plane_png(set: &LayerSet, layer: usize, frame: usize, tint: bool) -> Result<Vec<u8>, Error> {
    if frame >= set.frames() {
        return Err(Error::InvalidParameter(format!(
            "frame {frame} out of range for {} frames",
            set.frames()
        )));
    }
    let plane = set.plane(layer)?;
    let len = set.width() * set.height();
    let data = plane[frame * len..(frame + 1) * len]
        .iter()
        .flat_map(|&v| match v {
            v if tint && v < 0.0 => [1.0, 0.0, 0.0],
            v if tint && v > 1.0 => [0.0, 1.0, 0.0],
            v => [v.clamp(0.0, 1.0); 3],
        })
        .collect();
    layerbuild::pixel::PixelVolume::new(set.width(), set.height(), 1, data)?.encode_png(0)
}
