//! Per-pixel layer weights: projection from superpixels, composition,
//! per-layer filtering and the `.lbld` file format.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::manifold::{PixelProjector, SparseRowMatrix};
use crate::palette::Palette;
use crate::pixel::{PixelVolume, Rgb32};
use crate::solver::SuperpixelLayers;

pub const LBLD_MAGIC: [u8; 4] = *b"LBLD";
pub const LBLD_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;

/// Weight planes `X_j`, one per palette color, each with one value per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSet {
    width: usize,
    height: usize,
    frames: usize,
    palette: Palette,
    weights: Vec<Vec<f32>>,
}

impl LayerSet {
    pub fn new(width: usize, height: usize, frames: usize, palette: Palette, weights: Vec<Vec<f32>>) -> Result<Self> {
        let p = width * height * frames;
        if p == 0 {
            return Err(Error::DimensionMismatch(format!(
                "layer dimensions must be positive, got {width}x{height}x{frames}"
            )));
        }
        if weights.len() != palette.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} weight planes for {} palette colors",
                weights.len(),
                palette.len()
            )));
        }
        for (j, plane) in weights.iter().enumerate() {
            if plane.len() != p {
                return Err(Error::DimensionMismatch(format!(
                    "plane {j} holds {} values, expected {p}",
                    plane.len()
                )));
            }
            if let Some(v) = plane.iter().find(|v| !v.is_finite()) {
                return Err(Error::ValueOutOfRange(*v as f64));
            }
        }
        Ok(Self {
            width,
            height,
            frames,
            palette,
            weights,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height * self.frames
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn palette(&self) -> &Palette {
        &self.palette
    }

    pub fn planes(&self) -> &[Vec<f32>] {
        &self.weights
    }

    pub fn plane(&self, j: usize) -> Result<&[f32]> {
        self.weights.get(j).map(Vec::as_slice).ok_or(Error::LayerOutOfRange {
            layer: j,
            layers: self.weights.len(),
        })
    }

    /// One layer as a grayscale volume, weights clamped to `[0, 1]` for display.
    pub fn plane_volume(&self, j: usize) -> Result<PixelVolume> {
        let plane = self.plane(j)?;
        let data = plane.iter().flat_map(|&v| [v; 3]).collect();
        PixelVolume::new(self.width, self.height, self.frames, data)
    }
}

/// `X_j = Q L_j` for every layer.
pub fn project(q: &SparseRowMatrix, layers: &SuperpixelLayers) -> Result<Vec<Vec<f32>>> {
    if q.cols() != layers.superpixels() {
        return Err(Error::DimensionMismatch(format!(
            "projection has {} columns for {} superpixels",
            q.cols(),
            layers.superpixels()
        )));
    }
    Ok((0..layers.layers())
        .map(|j| {
            let l = layers.layer(j);
            let mut out = vec![0.0f32; q.rows()];
            out.par_chunks_mut(4096).enumerate().for_each(|(c, chunk)| {
                for (i, o) in chunk.iter_mut().enumerate() {
                    let (idx, vals) = q.row(c * 4096 + i);
                    let mut acc = 0.0;
                    for (&s, &v) in idx.iter().zip(vals) {
                        acc += v * l[s as usize];
                    }
                    *o = acc as f32;
                }
            });
            out
        })
        .collect())
}

/// Same as building Q for the whole volume and calling [`project`], but only
/// one frame of Q is held at a time.
pub fn project_volume(projector: &PixelProjector, volume: &PixelVolume, layers: &SuperpixelLayers) -> Result<Vec<Vec<f32>>> {
    let frame_len = volume.frame_len();
    let mut planes = vec![Vec::with_capacity(volume.num_pixels()); layers.layers()];
    for t in 0..volume.frames() {
        let q = projector.rows(volume, t * frame_len..(t + 1) * frame_len)?;
        for (plane, part) in planes.iter_mut().zip(project(&q, layers)?) {
            plane.extend(part);
        }
    }
    Ok(planes)
}

/// `Σ_j X_j c_j` per pixel without clamping, interleaved RGB.
pub fn compose_unclamped(layers: &LayerSet, colors: &[Rgb32]) -> Result<Vec<f32>> {
    check_colors(layers, colors)?;
    Ok(compose_range(layers, colors, 0..layers.num_pixels()))
}

fn check_colors(layers: &LayerSet, colors: &[Rgb32]) -> Result<()> {
    if colors.len() != layers.num_layers() {
        return Err(Error::DimensionMismatch(format!(
            "{} colors for {} layers",
            colors.len(),
            layers.num_layers()
        )));
    }
    Ok(())
}

fn compose_range(layers: &LayerSet, colors: &[Rgb32], range: Range<usize>) -> Vec<f32> {
    const CHUNK: usize = 8192;
    let mut out = vec![0.0f32; range.len() * 3];
    out.par_chunks_mut(CHUNK * 3).enumerate().for_each(|(c, chunk)| {
        let base = range.start + c * CHUNK;
        let n = chunk.len() / 3;
        for (plane, color) in layers.weights.iter().zip(colors) {
            let x = &plane[base..base + n];
            for (px, &v) in chunk.chunks_exact_mut(3).zip(x) {
                px[0] += v * color[0];
                px[1] += v * color[1];
                px[2] += v * color[2];
            }
        }
    });
    out
}

fn check_channels(colors: &[Rgb32]) -> Result<()> {
    for c in colors {
        if let Some(&v) = c.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::ChannelOutOfRange(v as f64));
        }
    }
    Ok(())
}

/// Reconstruction (original palette) or recoloring (edited palette).
pub fn compose(layers: &LayerSet, palette: &Palette) -> Result<PixelVolume> {
    compose_colors(layers, palette.colors())
}

/// Like [`compose`] but accepts any colors in `[0, 1]`, including repeats,
/// which recoloring may legitimately produce.
pub fn compose_colors(layers: &LayerSet, colors: &[Rgb32]) -> Result<PixelVolume> {
    check_channels(colors)?;
    let mut data = compose_unclamped(layers, colors)?;
    for v in &mut data {
        *v = v.clamp(0.0, 1.0);
    }
    PixelVolume::new(layers.width, layers.height, layers.frames, data)
}

/// Frame `t` of [`compose_colors`], computed without touching other frames.
pub fn compose_frame(layers: &LayerSet, colors: &[Rgb32], t: usize) -> Result<PixelVolume> {
    if t >= layers.frames {
        return Err(Error::InvalidParameter(format!(
            "frame {t} out of range for {} frames",
            layers.frames
        )));
    }
    check_channels(colors)?;
    check_colors(layers, colors)?;
    let frame = layers.width * layers.height;
    let mut data = compose_range(layers, colors, t * frame..(t + 1) * frame);
    for v in &mut data {
        *v = v.clamp(0.0, 1.0);
    }
    PixelVolume::new(layers.width, layers.height, 1, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kernel {
    Gaussian { sigma: f64 },
    /// `[[-2,-1,0],[-1,1,1],[0,1,2]]` plus a 0.5 offset.
    Emboss,
    /// Averages `length` samples trailing behind each pixel along the
    /// direction `angle` (degrees, counterclockwise from +x, y pointing up).
    MotionBlur { length: usize, angle: f64 },
}

impl Kernel {
    fn validate(&self) -> Result<()> {
        match *self {
            Kernel::Gaussian { sigma } if !(sigma > 0.0 && sigma.is_finite()) => {
                Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")))
            }
            Kernel::MotionBlur { length, .. } if length == 0 => {
                Err(Error::InvalidParameter("motion blur length must be positive".into()))
            }
            Kernel::MotionBlur { angle, .. } if !angle.is_finite() => {
                Err(Error::InvalidParameter(format!("angle must be finite, got {angle}")))
            }
            _ => Ok(()),
        }
    }
}

const EMBOSS: [[f32; 3]; 3] = [[-2.0, -1.0, 0.0], [-1.0, 1.0, 1.0], [0.0, 1.0, 2.0]];
const EMBOSS_BIAS: f32 = 0.5;

/// Returns a copy with layer `layer` filtered frame by frame, sampling beyond
/// the border at the nearest edge pixel.
pub fn filter_layer(layers: &LayerSet, layer: usize, kernel: Kernel) -> Result<LayerSet> {
    kernel.validate()?;
    let src = layers.plane(layer)?;
    let (w, h) = (layers.width, layers.height);
    let frame = w * h;
    let mut filtered = Vec::with_capacity(src.len());
    for t in 0..layers.frames {
        let f = &src[t * frame..(t + 1) * frame];
        filtered.extend(match kernel {
            Kernel::Gaussian { sigma } => gaussian(f, w, h, sigma),
            Kernel::Emboss => emboss(f, w, h),
            Kernel::MotionBlur { length, angle } => motion_blur(f, w, h, length, angle),
        });
    }
    let mut out = layers.clone();
    out.weights[layer] = filtered;
    Ok(out)
}

#[inline]
fn clamped(v: isize, extent: usize) -> usize {
    v.clamp(0, extent as isize - 1) as usize
}

fn gaussian(f: &[f32], w: usize, h: usize, sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);

    let mut tmp = vec![0.0f32; f.len()];
    for y in 0..h {
        for x in 0..w {
            let acc: f64 = taps
                .iter()
                .enumerate()
                .map(|(i, &k)| k * f[y * w + clamped(x as isize + i as isize - radius, w)] as f64)
                .sum();
            tmp[y * w + x] = acc as f32;
        }
    }
    let mut out = vec![0.0f32; f.len()];
    for y in 0..h {
        for x in 0..w {
            let acc: f64 = taps
                .iter()
                .enumerate()
                .map(|(i, &k)| k * tmp[clamped(y as isize + i as isize - radius, h) * w + x] as f64)
                .sum();
            out[y * w + x] = acc as f32;
        }
    }
    out
}

fn emboss(f: &[f32], w: usize, h: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; f.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = EMBOSS_BIAS;
            for (ky, row) in EMBOSS.iter().enumerate() {
                let sy = clamped(y as isize + ky as isize - 1, h);
                for (kx, &k) in row.iter().enumerate() {
                    let sx = clamped(x as isize + kx as isize - 1, w);
                    acc += k * f[sy * w + sx];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn motion_blur(f: &[f32], w: usize, h: usize, length: usize, angle: f64) -> Vec<f32> {
    let (sin, cos) = angle.to_radians().sin_cos();
    let offsets: Vec<(isize, isize)> = (0..length)
        .map(|k| ((k as f64 * cos).round() as isize, (-(k as f64) * sin).round() as isize))
        .collect();
    let scale = 1.0 / length as f32;
    let mut out = vec![0.0f32; f.len()];
    for y in 0..h {
        for x in 0..w {
            let acc: f32 = offsets
                .iter()
                .map(|&(dx, dy)| f[clamped(y as isize - dy, h) * w + clamped(x as isize - dx, w)])
                .sum();
            out[y * w + x] = acc * scale;
        }
    }
    out
}

/// Serializes to the `.lbld` layout: magic, version, width, height, frames,
/// layer count, palette, planes (all little-endian), then a CRC32 of
/// everything before it.
pub fn write_layers<W: Write>(layers: &LayerSet, sink: W) -> std::io::Result<()> {
    let mut sink = CrcWriter {
        inner: sink,
        crc: crc32fast::Hasher::new(),
    };
    sink.write_all(&LBLD_MAGIC)?;
    for v in [
        LBLD_VERSION,
        layers.width as u32,
        layers.height as u32,
        layers.frames as u32,
        layers.num_layers() as u32,
    ] {
        sink.write_all(&v.to_le_bytes())?;
    }
    for c in layers.palette.colors() {
        for v in c {
            sink.write_all(&v.to_le_bytes())?;
        }
    }
    let mut buf = Vec::with_capacity(64 * 1024);
    for plane in &layers.weights {
        for chunk in plane.chunks(16 * 1024) {
            buf.clear();
            buf.extend(chunk.iter().flat_map(|v| v.to_le_bytes()));
            sink.write_all(&buf)?;
        }
    }
    let crc = sink.crc.finalize();
    sink.inner.write_all(&crc.to_le_bytes())?;
    sink.inner.flush()
}

struct CrcWriter<W> {
    inner: W,
    crc: crc32fast::Hasher,
}

impl<W: Write> Write for CrcWriter<W> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.crc.update(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}

pub fn layers_to_bytes(layers: &LayerSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 12 * layers.num_layers() + 4 * layers.num_layers() * layers.num_pixels() + 4);
    write_layers(layers, &mut out).expect("writing to memory");
    out
}

fn u32_at(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

fn f32_at(bytes: &[u8], offset: usize) -> f32 {
    f32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

pub fn layers_from_bytes(bytes: &[u8]) -> Result<LayerSet> {
    if bytes.len() < LBLD_MAGIC.len() {
        return Err(Error::TruncatedPayload);
    }
    if bytes[..4] != LBLD_MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedPayload);
    }
    let version = u32_at(bytes, 4);
    if version != LBLD_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: LBLD_VERSION,
        });
    }
    let [width, height, frames, n] = [8, 12, 16, 20].map(|o| u32_at(bytes, o) as usize);
    let expected = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(frames))
        .and_then(|p| p.checked_mul(n)?.checked_mul(4))
        .and_then(|planes| planes.checked_add(HEADER_LEN + 12 * n + 4))
        .ok_or(Error::TruncatedPayload)?;
    if bytes.len() < expected {
        return Err(Error::TruncatedPayload);
    }
    if bytes.len() > expected {
        return Err(Error::TrailingBytes);
    }
    let body = &bytes[..expected - 4];
    if crc32fast::hash(body) != u32_at(bytes, expected - 4) {
        return Err(Error::ChecksumMismatch);
    }
    let colors = (0..n)
        .map(|j| std::array::from_fn(|d| f32_at(bytes, HEADER_LEN + 12 * j + 4 * d)))
        .collect();
    let palette = Palette::new(colors)?;
    let p = width * height * frames;
    let start = HEADER_LEN + 12 * n;
    let weights = (0..n)
        .map(|j| {
            bytes[start + 4 * p * j..start + 4 * p * (j + 1)]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect()
        })
        .collect();
    LayerSet::new(width, height, frames, palette, weights)
}

pub fn save_layers(layers: &LayerSet, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    write_layers(layers, BufWriter::new(file)).map_err(io_err(path))
}

pub fn load_layers(path: &Path) -> Result<LayerSet> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(io_err(path))?;
    layers_from_bytes(&bytes)
}
