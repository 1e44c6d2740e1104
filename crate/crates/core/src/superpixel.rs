//! Superpixel (supervoxel) segmentation by seeded region growing with
//! k-means style re-centering, and the 6-D features used for neighbor search.
//!
//! Each pass grows every region from one seed pixel through a single priority
//! queue keyed on the RGB distance between a candidate pixel and the region's
//! seed color. Equal priorities pop in insertion order. The next pass seeds each
//! region at the member pixel nearest its centroid, with its mean color.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::pixel::{PixelCoord, PixelVolume, Rgb32};

/// Region-growing passes: one from random seeds plus four re-centered ones.
pub const SRG_PASSES: usize = 5;

/// Weight applied to the normalized x and y feature components.
pub const SPATIAL_WEIGHT: f64 = 0.5;

/// A region smaller than `1 / STARVED_FRACTION` of the average size is
/// considered starved and re-seeded between passes.
const STARVED_FRACTION: usize = 16;

/// Squared RGB distance under which two region means count as identical.
const DUPLICATE_MEAN_DIST2: f32 = 1e-8;

/// Squared RGB spread a region needs before it is worth splitting.
const MIN_SPREAD2: f32 = 0.05 * 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct SuperpixelStat {
    pub mean_color: [f64; 3],
    /// (x, y, t) in pixel units.
    pub centroid: [f64; 3],
    pub feature: [f64; 6],
    pub pixel_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    width: usize,
    height: usize,
    frames: usize,
    labels: Vec<u32>,
    superpixels: Vec<SuperpixelStat>,
}

impl Segmentation {
    /// Builds a segmentation from explicit labels, computing per-region stats.
    /// Every id in `[0, max label]` must own at least one pixel.
    pub fn from_labels(volume: &PixelVolume, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != volume.num_pixels() {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} pixels",
                labels.len(),
                volume.num_pixels()
            )));
        }
        let s = labels.iter().max().map_or(0, |&m| m as usize + 1);
        let superpixels = region_stats(volume, &labels, s);
        if let Some(empty) = superpixels.iter().position(|sp| sp.pixel_count == 0) {
            return Err(Error::DimensionMismatch(format!(
                "superpixel {empty} owns no pixels"
            )));
        }
        Ok(Self {
            width: volume.width(),
            height: volume.height(),
            frames: volume.frames(),
            labels,
            superpixels,
        })
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn superpixels(&self) -> &[SuperpixelStat] {
        &self.superpixels
    }

    pub fn len(&self) -> usize {
        self.superpixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.superpixels.is_empty()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.frames)
    }

    pub fn mean_colors(&self) -> Vec<[f64; 3]> {
        self.superpixels.iter().map(|s| s.mean_color).collect()
    }

    pub fn feature_vectors(&self) -> Vec<[f64; 6]> {
        self.superpixels.iter().map(|s| s.feature).collect()
    }

    /// Superpixel owning the pixel at `coord`.
    pub fn label_at(&self, coord: PixelCoord) -> u32 {
        self.labels[(coord.t * self.height + coord.y) * self.width + coord.x]
    }

    /// Whether every region is connected under the segmentation connectivity.
    pub fn regions_connected(&self) -> bool {
        let p = self.labels.len();
        let mut seen = vec![false; p];
        let mut visited_regions = vec![false; self.superpixels.len()];
        let mut stack = Vec::new();
        let mut nbrs = Vec::with_capacity(6);
        for start in 0..p {
            let l = self.labels[start] as usize;
            if visited_regions[l] {
                continue;
            }
            visited_regions[l] = true;
            let mut reached = 0;
            seen[start] = true;
            stack.push(start);
            while let Some(i) = stack.pop() {
                reached += 1;
                neighbors(i, self.width, self.height, self.frames, &mut nbrs);
                for &j in &nbrs {
                    if !seen[j] && self.labels[j] as usize == l {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
            if reached != self.superpixels[l].pixel_count {
                return false;
            }
        }
        true
    }
}

/// Feature vector `(r, g, b, 0.5 x', 0.5 y', t')` with coordinates normalized
/// to `[0, 1]`; axes of extent 1 contribute 0.
#[inline]
pub fn feature_vector(color: [f64; 3], pos: [f64; 3], dims: (usize, usize, usize)) -> [f64; 6] {
    let norm = |v: f64, extent: usize| {
        if extent > 1 {
            v / (extent - 1) as f64
        } else {
            0.0
        }
    };
    [
        color[0],
        color[1],
        color[2],
        SPATIAL_WEIGHT * norm(pos[0], dims.0),
        SPATIAL_WEIGHT * norm(pos[1], dims.1),
        norm(pos[2], dims.2),
    ]
}

/// Feature vectors of every superpixel, recomputed from the volume.
pub fn features(segmentation: &Segmentation, volume: &PixelVolume) -> Result<Vec<[f64; 6]>> {
    if segmentation.dims() != (volume.width(), volume.height(), volume.frames()) {
        return Err(Error::DimensionMismatch(format!(
            "segmentation is {:?}, volume is {}x{}x{}",
            segmentation.dims(),
            volume.width(),
            volume.height(),
            volume.frames()
        )));
    }
    Ok(region_stats(volume, &segmentation.labels, segmentation.len())
        .into_iter()
        .map(|s| s.feature)
        .collect())
}

fn region_stats(volume: &PixelVolume, labels: &[u32], s: usize) -> Vec<SuperpixelStat> {
    let dims = (volume.width(), volume.height(), volume.frames());
    let mut color_sum = vec![[0.0f64; 3]; s];
    let mut pos_sum = vec![[0.0f64; 3]; s];
    let mut counts = vec![0usize; s];
    let mut i = 0;
    for t in 0..dims.2 {
        for y in 0..dims.1 {
            for x in 0..dims.0 {
                let l = labels[i] as usize;
                let c = volume.pixel(i);
                counts[l] += 1;
                for d in 0..3 {
                    color_sum[l][d] += c[d] as f64;
                }
                pos_sum[l][0] += x as f64;
                pos_sum[l][1] += y as f64;
                pos_sum[l][2] += t as f64;
                i += 1;
            }
        }
    }
    (0..s)
        .map(|l| {
            let n = counts[l].max(1) as f64;
            let mean_color = color_sum[l].map(|v| (v / n).clamp(0.0, 1.0));
            let centroid = pos_sum[l].map(|v| v / n);
            SuperpixelStat {
                mean_color,
                centroid,
                feature: feature_vector(mean_color, centroid, dims),
                pixel_count: counts[l],
            }
        })
        .collect()
}

/// 4 spatial neighbors plus the 2 temporal ones when there are several frames.
#[inline]
fn neighbors(i: usize, width: usize, height: usize, frames: usize, out: &mut Vec<usize>) {
    out.clear();
    let frame = width * height;
    let x = i % width;
    let y = (i / width) % height;
    let t = i / frame;
    if x > 0 {
        out.push(i - 1);
    }
    if x + 1 < width {
        out.push(i + 1);
    }
    if y > 0 {
        out.push(i - width);
    }
    if y + 1 < height {
        out.push(i + width);
    }
    if frames > 1 {
        if t > 0 {
            out.push(i - frame);
        }
        if t + 1 < frames {
            out.push(i + frame);
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
struct QueueEntry {
    /// Bits of a non-negative f32, which order like the float itself.
    priority: u32,
    seq: u64,
    label: u32,
    pixel: u32,
}

impl Ord for QueueEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed: BinaryHeap is a max-heap
        other
            .priority
            .cmp(&self.priority)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Min-queue on (priority, seq) split into heaps by the high bits of the
/// priority. Pops come from the lowest non-empty bucket, so the heap being
/// worked on stays small while far-off candidates wait untouched.
struct BucketQueue {
    buckets: Vec<BinaryHeap<QueueEntry>>,
    occupied: Vec<u64>,
    /// No bucket below this word of `occupied` holds entries.
    low_word: usize,
}

impl BucketQueue {
    /// 8 exponent bits and 4 mantissa bits of a non-negative f32.
    const SHIFT: u32 = 19;
    const BUCKETS: usize = 1 << (31 - Self::SHIFT);

    fn new() -> Self {
        Self {
            buckets: (0..Self::BUCKETS).map(|_| BinaryHeap::new()).collect(),
            occupied: vec![0; Self::BUCKETS / 64],
            low_word: Self::BUCKETS / 64,
        }
    }

    fn push(&mut self, entry: QueueEntry) {
        let b = (entry.priority >> Self::SHIFT) as usize;
        self.buckets[b].push(entry);
        self.occupied[b / 64] |= 1 << (b % 64);
        self.low_word = self.low_word.min(b / 64);
    }

    fn pop(&mut self) -> Option<QueueEntry> {
        while self.low_word < self.occupied.len() {
            let word = self.occupied[self.low_word];
            if word == 0 {
                self.low_word += 1;
                continue;
            }
            let b = self.low_word * 64 + word.trailing_zeros() as usize;
            let entry = self.buckets[b].pop();
            if self.buckets[b].is_empty() {
                self.occupied[b / 64] &= !(1 << (b % 64));
            }
            return entry;
        }
        None
    }
}

#[derive(Debug, Clone, Copy)]
struct Seed {
    pixel: usize,
    color: Rgb32,
}

#[inline]
fn color_dist2(a: Rgb32, b: Rgb32) -> f32 {
    let d0 = a[0] - b[0];
    let d1 = a[1] - b[1];
    let d2 = a[2] - b[2];
    d0 * d0 + d1 * d1 + d2 * d2
}

/// One seeded-region-growing pass. Every pixel ends up labeled because the
/// volume is connected and each region starts from its own seed pixel.
fn grow_regions(volume: &PixelVolume, seeds: &[Seed], labels: &mut [u32]) {
    let (w, h, f) = (volume.width(), volume.height(), volume.frames());
    labels.fill(u32::MAX);
    let mut best = vec![f32::INFINITY; labels.len()];
    let mut heap = BucketQueue::new();
    let mut seq = 0u64;
    for (label, seed) in seeds.iter().enumerate() {
        best[seed.pixel] = 0.0;
        heap.push(QueueEntry {
            priority: 0f32.to_bits(),
            seq,
            label: label as u32,
            pixel: seed.pixel as u32,
        });
        seq += 1;
    }
    let mut nbrs = Vec::with_capacity(6);
    while let Some(entry) = heap.pop() {
        let p = entry.pixel as usize;
        if labels[p] != u32::MAX {
            continue;
        }
        labels[p] = entry.label;
        let seed_color = seeds[entry.label as usize].color;
        neighbors(p, w, h, f, &mut nbrs);
        for &q in &nbrs {
            if labels[q] != u32::MAX {
                continue;
            }
            let d = color_dist2(volume.pixel(q), seed_color);
            // an equal priority pushed later would always pop later
            if d < best[q] {
                best[q] = d;
                heap.push(QueueEntry {
                    priority: d.to_bits(),
                    seq,
                    label: entry.label,
                    pixel: q as u32,
                });
                seq += 1;
            }
        }
    }
}

/// Seeds for the next pass: each region's member pixel closest to its
/// centroid (lowest index on ties) carrying the region's mean color. Starved
/// regions move to the worst-represented pixels of the current pass.
fn recenter(
    volume: &PixelVolume,
    labels: &[u32],
    stats: &[SuperpixelStat],
    seeds: &[Seed],
) -> Vec<Seed> {
    let s = stats.len();
    let p = labels.len();
    let (w, h) = (volume.width(), volume.height());
    let mut snapped = vec![(f64::INFINITY, usize::MAX); s];
    for (i, &l) in labels.iter().enumerate() {
        let l = l as usize;
        let c = stats[l].centroid;
        let x = (i % w) as f64;
        let y = ((i / w) % h) as f64;
        let t = (i / (w * h)) as f64;
        let d = (x - c[0]).powi(2) + (y - c[1]).powi(2) + (t - c[2]).powi(2);
        if d < snapped[l].0 {
            snapped[l] = (d, i);
        }
    }
    let mut next: Vec<Seed> = (0..s)
        .map(|l| Seed {
            pixel: snapped[l].1,
            color: stats[l].mean_color.map(|v| v as f32),
        })
        .collect();

    split_duplicate_regions(volume, labels, stats, &mut next);

    let starved: Vec<usize> = (0..s)
        .filter(|&l| stats[l].pixel_count * STARVED_FRACTION * s < p)
        .collect();
    if starved.is_empty() {
        return next;
    }
    let taken: HashSet<usize> = (0..s)
        .filter(|l| !starved.contains(l))
        .map(|l| next[l].pixel)
        .collect();
    let mut candidates: Vec<(f32, usize)> = labels
        .iter()
        .enumerate()
        .filter(|(i, _)| !taken.contains(i))
        .map(|(i, &l)| (color_dist2(volume.pixel(i), seeds[l as usize].color), i))
        .collect();
    let m = starved.len().min(candidates.len());
    let by_worst = |a: &(f32, usize), b: &(f32, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    if m < candidates.len() {
        candidates.select_nth_unstable_by(m, by_worst);
        candidates.truncate(m);
    }
    candidates.sort_by(by_worst);
    log::debug!("re-seeding {} starved superpixels", starved.len());
    for (&l, &(_, pixel)) in starved.iter().zip(&candidates) {
        next[l] = Seed {
            pixel,
            color: volume.pixel(pixel),
        };
    }
    next
}

/// Two regions whose mean colors coincide while each still spans distinct
/// colors are a fixed point of growing from the mean color: every member is
/// equally far from both seeds. Move the later one to the worst-represented
/// pixel of the pair so the next pass can separate the colors.
fn split_duplicate_regions(
    volume: &PixelVolume,
    labels: &[u32],
    stats: &[SuperpixelStat],
    next: &mut [Seed],
) {
    let s = stats.len();
    let means: Vec<Rgb32> = stats
        .iter()
        .map(|st| st.mean_color.map(|v| v as f32))
        .collect();
    let mut duplicates = Vec::new();
    for a in 0..s {
        for b in a + 1..s {
            if color_dist2(means[a], means[b]) <= DUPLICATE_MEAN_DIST2 {
                duplicates.push((a, b));
            }
        }
    }
    if duplicates.is_empty() {
        return;
    }
    // spread of each region around its mean, and where it peaks
    let mut worst = vec![(0.0f32, usize::MAX); s];
    for (i, &l) in labels.iter().enumerate() {
        let l = l as usize;
        let d = color_dist2(volume.pixel(i), means[l]);
        if d > worst[l].0 {
            worst[l] = (d, i);
        }
    }
    let mut taken: HashSet<usize> = next.iter().map(|seed| seed.pixel).collect();
    let mut moved = vec![false; s];
    for (a, b) in duplicates {
        if moved[a] || moved[b] || worst[a].0 <= MIN_SPREAD2 || worst[b].0 <= MIN_SPREAD2 {
            continue;
        }
        let (_, pixel) = if worst[b].0 > worst[a].0
            || (worst[b].0 == worst[a].0 && worst[b].1 < worst[a].1)
        {
            worst[b]
        } else {
            worst[a]
        };
        if !taken.insert(pixel) {
            continue;
        }
        next[b] = Seed {
            pixel,
            color: volume.pixel(pixel),
        };
        moved[b] = true;
    }
}

/// Segments `volume` into exactly `s` connected superpixels.
pub fn segment(volume: &PixelVolume, s: usize, seed: u64) -> Result<Segmentation> {
    let p = volume.num_pixels();
    if s < 1 || s > p {
        return Err(Error::SuperpixelCount {
            requested: s,
            pixels: p,
        });
    }
    if p > u32::MAX as usize {
        return Err(Error::DimensionMismatch(format!(
            "{p} pixels exceed the supported volume size"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut initial = index::sample(&mut rng, p, s).into_vec();
    initial.sort_unstable();
    let mut seeds: Vec<Seed> = initial
        .into_iter()
        .map(|pixel| Seed {
            pixel,
            color: volume.pixel(pixel),
        })
        .collect();

    let mut labels = vec![0u32; p];
    for pass in 0..SRG_PASSES {
        grow_regions(volume, &seeds, &mut labels);
        if pass + 1 < SRG_PASSES {
            let stats = region_stats(volume, &labels, s);
            seeds = recenter(volume, &labels, &stats, &seeds);
        }
    }
    let superpixels = region_stats(volume, &labels, s);
    debug_assert!(superpixels.iter().all(|sp| sp.pixel_count > 0));
    Ok(Segmentation {
        width: volume.width(),
        height: volume.height(),
        frames: volume.frames(),
        labels,
        superpixels,
    })
}

/// Copy of the volume with superpixel boundaries drawn in black.
pub fn boundary_overlay(segmentation: &Segmentation, volume: &PixelVolume) -> Result<PixelVolume> {
    let (w, h, f) = segmentation.dims();
    if (w, h, f) != (volume.width(), volume.height(), volume.frames()) {
        return Err(Error::DimensionMismatch(
            "segmentation and volume differ in size".into(),
        ));
    }
    let labels = segmentation.labels();
    let mut data = volume.data().to_vec();
    for i in 0..labels.len() {
        let x = i % w;
        let y = (i / w) % h;
        let edge = (x + 1 < w && labels[i + 1] != labels[i])
            || (y + 1 < h && labels[i + w] != labels[i]);
        if edge {
            data[i * 3..i * 3 + 3].fill(0.0);
        }
    }
    PixelVolume::new(w, h, f, data)
}
