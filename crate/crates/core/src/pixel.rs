//! Pixel storage and image/video file I/O.
//!
//! A [`PixelVolume`] holds `width * height * frames` RGB triplets in `[0, 1]`,
//! frame-major then row-major. Still images have a single frame; video is
//! read from numbered image sequences or from a stream of binary PPM frames.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Rgb};

use crate::error::{io_err, Error, Result};

pub type Rgb32 = [f32; 3];

/// Position of a pixel inside a volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PixelCoord {
    pub x: usize,
    pub y: usize,
    pub t: usize,
}

/// Immutable RGB volume with channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelVolume {
    width: usize,
    height: usize,
    frames: usize,
    data: Vec<f32>,
}

impl PixelVolume {
    /// Builds a volume from interleaved RGB data, clamping every channel into `[0, 1]`.
    /// Non-finite values become 0.
    pub fn new(width: usize, height: usize, frames: usize, mut data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || frames == 0 {
            return Err(Error::DimensionMismatch(format!(
                "volume dimensions must be positive, got {width}x{height}x{frames}"
            )));
        }
        let expected = width * height * frames * 3;
        if data.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "expected {expected} channel values for {width}x{height}x{frames}, got {}",
                data.len()
            )));
        }
        for v in &mut data {
            *v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
        }
        Ok(Self {
            width,
            height,
            frames,
            data,
        })
    }

    /// Volume where every pixel has the same color.
    pub fn filled(width: usize, height: usize, frames: usize, color: Rgb32) -> Result<Self> {
        let n = width * height * frames;
        let mut data = Vec::with_capacity(n * 3);
        for _ in 0..n {
            data.extend_from_slice(&color);
        }
        Self::new(width, height, frames, data)
    }

    /// Builds a volume by evaluating `f` at every coordinate.
    pub fn from_fn(
        width: usize,
        height: usize,
        frames: usize,
        mut f: impl FnMut(PixelCoord) -> Rgb32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * frames * 3);
        for t in 0..frames {
            for y in 0..height {
                for x in 0..width {
                    data.extend_from_slice(&f(PixelCoord { x, y, t }));
                }
            }
        }
        Self::new(width, height, frames, data)
    }

    /// Stacks equally sized single-frame volumes into a sequence.
    pub fn stack(frames: &[PixelVolume]) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::DimensionMismatch("cannot stack zero frames".into()))?;
        let mut data = Vec::with_capacity(first.data.len() * frames.len());
        for (index, f) in frames.iter().enumerate() {
            if f.width != first.width || f.height != first.height {
                return Err(Error::FrameSizeMismatch {
                    index,
                    width: first.width,
                    height: first.height,
                    got_width: f.width,
                    got_height: f.height,
                });
            }
            data.extend_from_slice(&f.data);
        }
        let count = data.len() / (first.width * first.height * 3);
        Self::new(first.width, first.height, count, data)
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

    /// Total pixel count across all frames.
    pub fn num_pixels(&self) -> usize {
        self.width * self.height * self.frames
    }

    pub fn frame_len(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, coord: PixelCoord) -> usize {
        (coord.t * self.height + coord.y) * self.width + coord.x
    }

    #[inline]
    pub fn coord(&self, index: usize) -> PixelCoord {
        let x = index % self.width;
        let rest = index / self.width;
        PixelCoord {
            x,
            y: rest % self.height,
            t: rest / self.height,
        }
    }

    #[inline]
    pub fn pixel(&self, index: usize) -> Rgb32 {
        let i = index * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn at(&self, coord: PixelCoord) -> Rgb32 {
        self.pixel(self.index(coord))
    }

    /// Copy of a single frame as its own volume.
    pub fn frame(&self, t: usize) -> Result<Self> {
        if t >= self.frames {
            return Err(Error::OutOfBounds {
                x: 0,
                y: 0,
                t: t as i64,
                width: self.width,
                height: self.height,
                frames: self.frames,
            });
        }
        let len = self.frame_len() * 3;
        Self::new(
            self.width,
            self.height,
            1,
            self.data[t * len..(t + 1) * len].to_vec(),
        )
    }

    fn frame_to_rgb8(&self, t: usize) -> ImageBuffer<Rgb<u8>, Vec<u8>> {
        let len = self.frame_len() * 3;
        let bytes: Vec<u8> = self.data[t * len..(t + 1) * len]
            .iter()
            .map(|&v| quantize(v))
            .collect();
        ImageBuffer::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer length matches frame dimensions")
    }

    /// Encodes one frame as an 8-bit PNG in memory.
    pub fn encode_png(&self, t: usize) -> Result<Vec<u8>> {
        let img = self.frame_to_rgb8(t);
        let mut out = std::io::Cursor::new(Vec::new());
        img.write_to(&mut out, image::ImageFormat::Png)
            .map_err(|source| Error::Encode {
                path: PathBuf::from("<memory>"),
                source,
            })?;
        Ok(out.into_inner())
    }
}

/// 8-bit quantization with round-to-nearest.
#[inline]
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// How to interpret an input path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolumeKind {
    /// A single still image file.
    Image,
    /// A directory of frames, read in lexicographic filename order.
    ImageSequence,
    /// A file of concatenated binary PPM (P6) frames, as written by
    /// `ffmpeg -f image2pipe -vcodec ppm`.
    RawVideo,
}

impl VolumeKind {
    /// Picks a kind from the filesystem: directories are sequences,
    /// `.ppm`/`.pnm` streams are raw video, anything else a still image.
    pub fn detect(path: &Path) -> Self {
        if path.is_dir() {
            return Self::ImageSequence;
        }
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref()
        {
            Some("ppm") | Some("pnm") => Self::RawVideo,
            _ => Self::Image,
        }
    }
}

/// Loads an image, image sequence, or PPM stream into a volume.
pub fn load_volume(path: &Path, kind: VolumeKind) -> Result<PixelVolume> {
    match kind {
        VolumeKind::Image => {
            let img = image::open(path).map_err(|source| decode_err(path, source))?;
            image_to_volume(img)
        }
        VolumeKind::ImageSequence => {
            let mut files: Vec<PathBuf> = fs::read_dir(path)
                .map_err(io_err(path))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file() && is_image_file(p))
                .collect();
            files.sort();
            if files.is_empty() {
                return Err(Error::NoFrames(path.to_path_buf()));
            }
            let frames = files
                .iter()
                .map(|f| {
                    let img = image::open(f).map_err(|source| decode_err(f, source))?;
                    image_to_volume(img)
                })
                .collect::<Result<Vec<_>>>()?;
            PixelVolume::stack(&frames)
        }
        VolumeKind::RawVideo => {
            let bytes = fs::read(path).map_err(io_err(path))?;
            load_ppm_stream(path, &bytes)
        }
    }
}

/// Decodes an in-memory PNG (or any enabled format) as a one-frame volume.
pub fn decode_image(bytes: &[u8]) -> Result<PixelVolume> {
    let img = image::load_from_memory(bytes).map_err(|source| decode_err(Path::new("<memory>"), source))?;
    image_to_volume(img)
}

fn decode_err(path: &Path, source: image::ImageError) -> Error {
    match source {
        image::ImageError::IoError(source) => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        source => Error::Decode {
            path: path.to_path_buf(),
            source,
        },
    }
}

fn is_image_file(p: &Path) -> bool {
    matches!(
        p.extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref(),
        Some("png") | Some("ppm") | Some("pnm")
    )
}

fn image_to_volume(img: DynamicImage) -> Result<PixelVolume> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f32> = match img {
        DynamicImage::ImageRgb8(_)
        | DynamicImage::ImageRgba8(_)
        | DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLumaA8(_) => img
            .to_rgb8()
            .into_raw()
            .into_iter()
            .map(|v| v as f32 / 255.0)
            .collect(),
        DynamicImage::ImageRgb16(_)
        | DynamicImage::ImageRgba16(_)
        | DynamicImage::ImageLuma16(_)
        | DynamicImage::ImageLumaA16(_) => img
            .to_rgb16()
            .into_raw()
            .into_iter()
            .map(|v| v as f32 / 65535.0)
            .collect(),
        other => other.to_rgb32f().into_raw(),
    };
    PixelVolume::new(w, h, 1, data)
}

fn load_ppm_stream(path: &Path, bytes: &[u8]) -> Result<PixelVolume> {
    let malformed = |msg: &str| Error::Decode {
        path: path.to_path_buf(),
        source: image::ImageError::Decoding(image::error::DecodingError::new(
            image::error::ImageFormatHint::Name("PPM stream".into()),
            msg.to_string(),
        )),
    };
    let mut frames = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        if bytes[pos].is_ascii_whitespace() {
            pos += 1;
            continue;
        }
        let mut fields = [0usize; 3];
        if bytes.get(pos..pos + 2) != Some(b"P6") {
            return Err(malformed("expected P6 header"));
        }
        pos += 2;
        for field in &mut fields {
            // whitespace and comments before each header field
            loop {
                match bytes.get(pos) {
                    Some(b) if b.is_ascii_whitespace() => pos += 1,
                    Some(b'#') => {
                        while pos < bytes.len() && bytes[pos] != b'\n' {
                            pos += 1;
                        }
                    }
                    _ => break,
                }
            }
            let start = pos;
            while pos < bytes.len() && bytes[pos].is_ascii_digit() {
                pos += 1;
            }
            *field = std::str::from_utf8(&bytes[start..pos])
                .ok()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| malformed("bad header field"))?;
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let [w, h, maxval] = fields;
        if w == 0 || h == 0 || maxval == 0 || maxval > 65535 {
            return Err(malformed("bad frame dimensions"));
        }
        let bpc = if maxval < 256 { 1 } else { 2 };
        let len = w * h * 3 * bpc;
        let raster = bytes
            .get(pos..pos + len)
            .ok_or_else(|| malformed("truncated frame"))?;
        pos += len;
        let scale = maxval as f32;
        let data: Vec<f32> = if bpc == 1 {
            raster.iter().map(|&v| v as f32 / scale).collect()
        } else {
            raster
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]) as f32 / scale)
                .collect()
        };
        frames.push(PixelVolume::new(w, h, 1, data)?);
    }
    if frames.is_empty() {
        return Err(Error::NoFrames(path.to_path_buf()));
    }
    PixelVolume::stack(&frames)
}

/// Saves a still as one 8-bit PNG at `path`; a multi-frame volume is written
/// into the directory `path` as `frame_000.png`, `frame_001.png`, ...
pub fn save_volume(volume: &PixelVolume, path: &Path) -> Result<()> {
    if volume.frames() == 1 {
        return save_frame(volume, 0, path);
    }
    fs::create_dir_all(path).map_err(io_err(path))?;
    for t in 0..volume.frames() {
        save_frame(volume, t, &path.join(frame_file_name(t)))?;
    }
    Ok(())
}

pub fn frame_file_name(t: usize) -> String {
    format!("frame_{t:03}.png")
}

fn save_frame(volume: &PixelVolume, t: usize, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    volume
        .frame_to_rgb8(t)
        .write_to(&mut w, image::ImageFormat::Png)
        .map_err(|source| match source {
            image::ImageError::IoError(source) => Error::Io {
                path: path.to_path_buf(),
                source,
            },
            source => Error::Encode {
                path: path.to_path_buf(),
                source,
            },
        })?;
    w.flush().map_err(io_err(path))
}
