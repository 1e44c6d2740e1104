//! Superpixel manifold: LLE weights among superpixels (`W`, S x S) and from
//! pixels to superpixels (`Q`, P x S).
//!
//! Neighbors are chosen in the 6-D feature space; the reconstruction itself
//! is solved over colors.

mod knn;
mod lle;
mod sparse;

use std::ops::Range;

use rayon::prelude::*;

pub use knn::{knn, squared_distance, KdTree, Neighbor, NeighborList};
pub use lle::{lle_weights, LleSolver, GRAM_REGULARIZATION, ZERO_TRACE_REGULARIZATION};
pub use sparse::SparseRowMatrix;

use crate::error::{Error, Result};
use crate::pixel::PixelVolume;
use crate::superpixel::{feature_vector, Segmentation};

pub const DEFAULT_SUPERPIXEL_NEIGHBORS: usize = 30;
pub const DEFAULT_PIXEL_NEIGHBORS: usize = 10;

/// Row `i` reconstructs superpixel `i`'s color from its `k_s` nearest
/// superpixels in feature space (itself excluded). If there are not enough
/// superpixels, `k_s` drops to `S - 1`; a single superpixel yields a zero row.
pub fn build_w(features: &[[f64; 6]], colors: &[[f64; 3]], k_s: usize) -> Result<SparseRowMatrix> {
    let s = features.len();
    if colors.len() != s {
        return Err(Error::DimensionMismatch(format!(
            "{} features but {} colors",
            s,
            colors.len()
        )));
    }
    let k = if s <= k_s {
        let reduced = s.saturating_sub(1);
        log::warn!("{s} superpixels cannot supply {k_s} neighbors each; using {reduced}");
        reduced
    } else {
        k_s
    };
    let tree = KdTree::new(features);
    let rows: Vec<Vec<(usize, f64)>> = (0..s)
        .into_par_iter()
        .map_init(
            || (LleSolver::default(), Vec::new(), Vec::new()),
            |(solver, diffs, weights), i| {
                if k == 0 {
                    return Vec::new();
                }
                let nbrs = tree.nearest(&features[i], k, Some(i));
                diffs.clear();
                for n in &nbrs {
                    let c = colors[n.index];
                    diffs.extend((0..3).map(|d| c[d] - colors[i][d]));
                }
                weights.resize(nbrs.len(), 0.0);
                solver.solve(diffs, nbrs.len(), 3, weights);
                nbrs.iter().map(|n| n.index).zip(weights.iter().copied()).collect()
            },
        )
        .collect();
    SparseRowMatrix::from_rows(s, rows)
}

/// Computes rows of `Q` for arbitrary pixel ranges, so the full `P x S`
/// matrix never has to exist at once for long videos.
#[derive(Debug, Clone)]
pub struct PixelProjector {
    tree: KdTree<6>,
    colors: Vec<[f64; 3]>,
    k: usize,
    dims: (usize, usize, usize),
}

impl PixelProjector {
    pub fn new(segmentation: &Segmentation, k_p: usize) -> Result<Self> {
        let s = segmentation.len();
        if k_p == 0 || k_p > s {
            return Err(Error::NeighborCount { k: k_p, corpus: s });
        }
        Ok(Self {
            tree: KdTree::new(&segmentation.feature_vectors()),
            colors: segmentation.mean_colors(),
            k: k_p,
            dims: segmentation.dims(),
        })
    }

    pub fn neighbors_per_pixel(&self) -> usize {
        self.k
    }

    pub fn superpixels(&self) -> usize {
        self.colors.len()
    }

    /// Rows of `Q` for the pixels in `range`, as a `range.len() x S` matrix.
    pub fn rows(&self, volume: &PixelVolume, range: Range<usize>) -> Result<SparseRowMatrix> {
        if (volume.width(), volume.height(), volume.frames()) != self.dims {
            return Err(Error::DimensionMismatch(
                "volume does not match the segmentation".into(),
            ));
        }
        if range.end > volume.num_pixels() || range.start > range.end {
            return Err(Error::DimensionMismatch(format!(
                "pixel range {range:?} outside a volume of {} pixels",
                volume.num_pixels()
            )));
        }
        let k = self.k;
        let n = range.len();
        let mut indices = vec![0u32; n * k];
        let mut values = vec![0.0f64; n * k];
        const CHUNK: usize = 4096;
        indices
            .par_chunks_mut(CHUNK * k)
            .zip(values.par_chunks_mut(CHUNK * k))
            .enumerate()
            .for_each(|(chunk, (idx_out, val_out))| {
                let mut solver = LleSolver::default();
                let mut diffs = Vec::with_capacity(k * 3);
                let mut weights = vec![0.0; k];
                let mut pairs: Vec<(u32, f64)> = Vec::with_capacity(k);
                let mut best = Vec::with_capacity(k + 1);
                // the previous pixel's neighbors bound the search for the next
                let mut hint: Vec<usize> = Vec::with_capacity(k);
                let first = range.start + chunk * CHUNK;
                for (local, (idx_row, val_row)) in idx_out
                    .chunks_exact_mut(k)
                    .zip(val_out.chunks_exact_mut(k))
                    .enumerate()
                {
                    let p = first + local;
                    let coord = volume.coord(p);
                    let c = volume.pixel(p);
                    let color = [c[0] as f64, c[1] as f64, c[2] as f64];
                    let feat = feature_vector(
                        color,
                        [coord.x as f64, coord.y as f64, coord.t as f64],
                        self.dims,
                    );
                    self.tree.nearest_into(&feat, k, None, &hint, &mut best);
                    hint.clear();
                    hint.extend(best.iter().map(|&(_, i)| i));
                    diffs.clear();
                    for &i in &hint {
                        let sc = self.colors[i];
                        diffs.extend((0..3).map(|d| sc[d] - color[d]));
                    }
                    solver.solve(&diffs, k, 3, &mut weights);
                    pairs.clear();
                    pairs.extend(hint.iter().map(|&i| i as u32).zip(weights.iter().copied()));
                    pairs.sort_unstable_by_key(|&(c, _)| c);
                    for (slot, &(c, w)) in pairs.iter().enumerate() {
                        idx_row[slot] = c;
                        val_row[slot] = w;
                    }
                }
            });
        let row_ptr = (0..=n).map(|r| r * k).collect();
        Ok(SparseRowMatrix::from_csr(
            n,
            self.colors.len(),
            row_ptr,
            indices,
            values,
        ))
    }
}

/// The full `P x S` pixel-to-superpixel matrix.
pub fn build_q(volume: &PixelVolume, segmentation: &Segmentation, k_p: usize) -> Result<SparseRowMatrix> {
    PixelProjector::new(segmentation, k_p)?.rows(volume, 0..volume.num_pixels())
}
