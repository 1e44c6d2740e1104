//! Layer palettes: validation, JSON I/O, convex-hull distance, and automatic
//! extraction.
//!
//! Automatic extraction clusters a seeded pixel sample with k-means and scores
//! each candidate palette by how well it covers the sample (mean distance to
//! the nearest palette color) and how well it linearly spans it (mean distance
//! to the palette's convex hull).

use std::collections::HashSet;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::pixel::{PixelVolume, Rgb32};

/// Minimum RGB distance between two palette colors.
pub const MIN_COLOR_SEPARATION: f64 = 1e-6;

/// Ordered list of layer colors.
#[derive(Debug, Clone, PartialEq)]
pub struct Palette {
    colors: Vec<Rgb32>,
}

impl Palette {
    pub fn new(colors: Vec<Rgb32>) -> Result<Self> {
        if colors.is_empty() {
            return Err(Error::EmptyPalette);
        }
        for c in &colors {
            for &v in c {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::ChannelOutOfRange(v as f64));
                }
            }
        }
        for i in 0..colors.len() {
            for j in i + 1..colors.len() {
                if dist(to_f64(colors[i]), to_f64(colors[j])) <= MIN_COLOR_SEPARATION {
                    return Err(Error::DuplicateColor(i, j));
                }
            }
        }
        Ok(Self { colors })
    }

    /// Validates `f64` channels before narrowing them to storage precision.
    pub fn from_f64(colors: &[[f64; 3]]) -> Result<Self> {
        let mut out = Vec::with_capacity(colors.len());
        for c in colors {
            for &v in c {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::ChannelOutOfRange(v));
                }
            }
            out.push([c[0] as f32, c[1] as f32, c[2] as f32]);
        }
        Self::new(out)
    }

    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }

    pub fn colors(&self) -> &[Rgb32] {
        &self.colors
    }

    pub fn color(&self, j: usize) -> [f64; 3] {
        to_f64(self.colors[j])
    }

    pub fn colors_f64(&self) -> Vec<[f64; 3]> {
        self.colors.iter().map(|&c| to_f64(c)).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&PaletteDoc {
            colors: self.colors_f64(),
        })
        .expect("palette serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: PaletteDoc = serde_json::from_str(text)?;
        Self::from_f64(&doc.colors)
    }
}

/// On-disk palette document: `{"colors": [[r, g, b], ...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PaletteDoc {
    pub colors: Vec<[f64; 3]>,
}

pub fn parse_palette(path: &Path) -> Result<Palette> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    Palette::from_json(&text)
}

#[inline]
fn to_f64(c: Rgb32) -> [f64; 3] {
    [c[0] as f64, c[1] as f64, c[2] as f64]
}

#[inline]
fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = sub(a, b);
    dot(d, d).sqrt()
}

const HULL_TOLERANCE: f64 = 1e-9;
const HULL_MAX_ITERS: usize = 100_000;
const POLISH_EVERY: usize = 10;
const POLISH_MAX_SUPPORT: usize = 6;
/// Up to this size every face is checked directly (385 faces at 10 colors).
const DIRECT_MAX_COLORS: usize = 10;

/// Euclidean distance from `color` to the convex hull of `palette`.
///
/// One and two colors are handled in closed form. The closest point always
/// lies on a face spanned by at most four colors, so small palettes try each
/// such face and accept the one meeting the optimality conditions. Larger
/// palettes, or degenerate cases where no face passes, run projected gradient
/// over the probability simplex, polishing the current support periodically.
pub fn hull_distance(color: [f64; 3], palette: &[[f64; 3]]) -> Result<f64> {
    match palette {
        [] => Err(Error::EmptyPalette),
        [a] => Ok(dist(color, *a)),
        [a, b] => {
            let ab = sub(*b, *a);
            let len2 = dot(ab, ab);
            let t = if len2 > 0.0 {
                (dot(sub(color, *a), ab) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let p = [a[0] + t * ab[0], a[1] + t * ab[1], a[2] + t * ab[2]];
            Ok(dist(color, p))
        }
        _ if palette.len() <= DIRECT_MAX_COLORS => {
            let all: Vec<usize> = (0..palette.len()).collect();
            Ok(polish_support(color, palette, &all)
                .unwrap_or_else(|| projected_gradient_distance(color, palette)))
        }
        _ => Ok(projected_gradient_distance(color, palette)),
    }
}

fn projected_gradient_distance(x: [f64; 3], c: &[[f64; 3]]) -> f64 {
    let n = c.len();
    // gram matrix and C^T x
    let mut g = vec![0.0; n * n];
    let mut h = vec![0.0; n];
    for i in 0..n {
        h[i] = dot(c[i], x);
        for j in 0..n {
            g[i * n + j] = dot(c[i], c[j]);
        }
    }
    let lipschitz = 2.0 * largest_eigenvalue(&g, n).max(1e-300);
    let step = 1.0 / lipschitz;

    let mut w = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    let mut grad = vec![0.0; n];
    let objective = |w: &[f64]| {
        let p = combine(c, w);
        let r = sub(p, x);
        dot(r, r)
    };

    for iter in 1..=HULL_MAX_ITERS {
        for i in 0..n {
            let gw: f64 = (0..n).map(|j| g[i * n + j] * w[j]).sum();
            grad[i] = 2.0 * (gw - h[i]);
        }
        for i in 0..n {
            next[i] = w[i] - step * grad[i];
        }
        project_to_simplex(&mut next);
        let change = w
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        std::mem::swap(&mut w, &mut next);
        if change <= HULL_TOLERANCE {
            break;
        }
        if iter % POLISH_EVERY == 0 {
            let support: Vec<usize> = (0..n).filter(|&i| w[i] > 0.0).collect();
            if support.len() <= POLISH_MAX_SUPPORT {
                if let Some(d) = polish_support(x, c, &support) {
                    return d;
                }
            }
        }
    }
    objective(&w).sqrt()
}

fn combine(c: &[[f64; 3]], w: &[f64]) -> [f64; 3] {
    let mut p = [0.0; 3];
    for (ci, &wi) in c.iter().zip(w) {
        for d in 0..3 {
            p[d] += wi * ci[d];
        }
    }
    p
}

/// Tries every face spanned by at most four support vertices. Returns the
/// distance once a face satisfies the optimality conditions over the whole
/// palette.
fn polish_support(x: [f64; 3], c: &[[f64; 3]], support: &[usize]) -> Option<f64> {
    let m = support.len();
    for size in 1..=m.min(4) {
        let mut subset: Vec<usize> = (0..size).collect();
        loop {
            let face: Vec<usize> = subset.iter().map(|&k| support[k]).collect();
            if let Some(v) = affine_projection(x, c, &face) {
                if v.iter().all(|&vi| vi >= 0.0) {
                    let mut p = [0.0; 3];
                    for (&i, &vi) in face.iter().zip(&v) {
                        for d in 0..3 {
                            p[d] += vi * c[i][d];
                        }
                    }
                    let r = sub(p, x);
                    let on_face = dot(p, r);
                    let scale = 1e-12 * (1.0 + dot(r, r).sqrt());
                    if c.iter().all(|ci| dot(*ci, r) >= on_face - scale) {
                        return Some(dot(r, r).sqrt());
                    }
                }
            }
            if !next_combination(&mut subset, m) {
                break;
            }
        }
    }
    None
}

fn next_combination(subset: &mut [usize], n: usize) -> bool {
    let k = subset.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if subset[i] < n - k + i {
            subset[i] += 1;
            for j in i + 1..k {
                subset[j] = subset[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Barycentric coordinates of the projection of `x` onto the affine hull of
/// `face`, or `None` when the face is affinely degenerate.
fn affine_projection(x: [f64; 3], c: &[[f64; 3]], face: &[usize]) -> Option<Vec<f64>> {
    let base = c[face[0]];
    let m = face.len() - 1;
    if m == 0 {
        return Some(vec![1.0]);
    }
    let dirs: Vec<[f64; 3]> = face[1..].iter().map(|&i| sub(c[i], base)).collect();
    let rhs_vec = sub(x, base);
    let mut a = [[0.0; 4]; 3];
    for i in 0..m {
        for j in 0..m {
            a[i][j] = dot(dirs[i], dirs[j]);
        }
        a[i][m] = dot(dirs[i], rhs_vec);
    }
    let scale = (0..m).map(|i| a[i][i]).fold(0.0, f64::max);
    if scale <= 0.0 {
        return None;
    }
    // Gaussian elimination with partial pivoting on the m x m normal system
    for col in 0..m {
        let pivot = (col..m)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[pivot][col].abs() <= 1e-12 * scale {
            return None;
        }
        a.swap(col, pivot);
        for row in col + 1..m {
            let f = a[row][col] / a[col][col];
            for k in col..=m {
                a[row][k] -= f * a[col][k];
            }
        }
    }
    let mut coef = [0.0; 3];
    for row in (0..m).rev() {
        let mut s = a[row][m];
        for k in row + 1..m {
            s -= a[row][k] * coef[k];
        }
        coef[row] = s / a[row][row];
    }
    let mut v = Vec::with_capacity(m + 1);
    v.push(1.0 - coef[..m].iter().sum::<f64>());
    v.extend_from_slice(&coef[..m]);
    Some(v)
}

fn largest_eigenvalue(g: &[f64], n: usize) -> f64 {
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut lambda = 0.0;
    for _ in 0..50 {
        let mut next = vec![0.0; n];
        for i in 0..n {
            next[i] = (0..n).map(|j| g[i * n + j] * v[j]).sum();
        }
        let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = norm;
        for (vi, ni) in v.iter_mut().zip(next) {
            *vi = ni / norm;
        }
    }
    // power iteration approaches from below; pad so the step stays stable
    lambda * 1.01
}

/// Euclidean projection onto `{w >= 0, sum w = 1}`.
fn project_to_simplex(w: &mut [f64]) {
    let mut sorted: Vec<f64> = w.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let t = (cumulative - 1.0) / (k + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    for v in w {
        *v = (*v - theta).max(0.0);
    }
}

/// Settings for automatic palette extraction.
#[derive(Debug, Clone)]
pub struct ExtractOptions {
    pub sample_size: usize,
    pub restarts: usize,
    pub max_iters: usize,
    pub convergence: f64,
    pub hull_weight: f64,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self {
            sample_size: 10_000,
            restarts: 8,
            max_iters: 50,
            convergence: 1e-6,
            hull_weight: 5.0,
        }
    }
}

pub fn extract_palette(volume: &PixelVolume, n: usize, seed: u64) -> Result<Palette> {
    extract_palette_with(volume, n, seed, &ExtractOptions::default())
}

/// Picks `n` colors maximizing `-coverage - hull_weight * hull_distance`,
/// both averaged over a seeded pixel sample. Colors are ordered by
/// descending cluster population.
pub fn extract_palette_with(
    volume: &PixelVolume,
    n: usize,
    seed: u64,
    opts: &ExtractOptions,
) -> Result<Palette> {
    if n == 0 {
        return Err(Error::InvalidParameter("palette size must be at least 1".into()));
    }
    let samples = sample_pixels(volume, opts.sample_size, seed);
    let distinct = distinct_colors(&samples);
    if n > distinct.len() {
        return Err(Error::TooFewColors {
            requested: n,
            available: distinct.len(),
        });
    }
    let mean = mean_color(&samples);

    let mut best: Option<(f64, Vec<[f64; 3]>)> = None;
    for restart in 0..opts.restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(restart as u64 + 1)));
        let (centroids, assignment) = kmeans(&samples, &distinct, n, opts, &mut rng);
        let mut candidates = vec![centroids.clone()];
        for fraction in EXPANSION_FRACTIONS {
            candidates.push(expand_toward_hull(&samples, &assignment, &centroids, mean, fraction));
        }
        for candidate in candidates {
            if !is_separated(&candidate) {
                continue;
            }
            let score = score_palette(&samples, &candidate, opts.hull_weight);
            // strict comparison keeps the earliest candidate on ties
            if best.as_ref().map_or(true, |(s, _)| score > *s) {
                best = Some((score, candidate));
            }
        }
    }
    let (_, colors) = best.ok_or(Error::TooFewColors {
        requested: n,
        available: distinct.len(),
    })?;

    let mut population = vec![0usize; n];
    for s in &samples {
        population[nearest(&colors, *s).0] += 1;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| population[b].cmp(&population[a]).then(a.cmp(&b)));
    let ordered: Vec<[f64; 3]> = order
        .iter()
        .map(|&i| colors[i].map(|v| v.clamp(0.0, 1.0)))
        .collect();
    Palette::from_f64(&ordered)
}

fn sample_pixels(volume: &PixelVolume, size: usize, seed: u64) -> Vec<[f64; 3]> {
    let p = volume.num_pixels();
    if p <= size {
        return (0..p).map(|i| to_f64(volume.pixel(i))).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, p, size).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| to_f64(volume.pixel(i))).collect()
}

fn distinct_colors(samples: &[[f64; 3]]) -> Vec<[f64; 3]> {
    let mut seen = HashSet::new();
    samples
        .iter()
        .filter(|c| seen.insert(c.map(f64::to_bits)))
        .copied()
        .collect()
}

fn mean_color(samples: &[[f64; 3]]) -> [f64; 3] {
    let mut m = [0.0; 3];
    for s in samples {
        for d in 0..3 {
            m[d] += s[d];
        }
    }
    m.map(|v| v / samples.len() as f64)
}

fn nearest(colors: &[[f64; 3]], x: [f64; 3]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in colors.iter().enumerate() {
        let d = sub(x, *c);
        let d2 = dot(d, d);
        if d2 < best.1 {
            best = (i, d2);
        }
    }
    best
}

/// Lloyd iterations from a k-means++ start drawn over distinct colors.
fn kmeans(
    samples: &[[f64; 3]],
    distinct: &[[f64; 3]],
    k: usize,
    opts: &ExtractOptions,
    rng: &mut ChaCha8Rng,
) -> (Vec<[f64; 3]>, Vec<usize>) {
    let mut centroids = Vec::with_capacity(k);
    centroids.push(distinct[rng.gen_range(0..distinct.len())]);
    let mut d2: Vec<f64> = distinct
        .iter()
        .map(|c| {
            let d = sub(*c, centroids[0]);
            dot(d, d)
        })
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    chosen = Some(i);
                    if target < w {
                        break;
                    }
                    target -= w;
                }
            }
            chosen.expect("positive total implies a positive weight")
        } else {
            // fewer distinct colors than requested cannot reach here
            d2.iter().position(|&w| w > 0.0).unwrap_or(0)
        };
        let c = distinct[pick];
        centroids.push(c);
        for (w, x) in d2.iter_mut().zip(distinct) {
            let d = sub(*x, c);
            *w = w.min(dot(d, d));
        }
    }

    let mut assignment = vec![0usize; samples.len()];
    for _ in 0..opts.max_iters {
        for (a, s) in assignment.iter_mut().zip(samples) {
            *a = nearest(&centroids, *s).0;
        }
        let mut sums = vec![[0.0; 3]; k];
        let mut counts = vec![0usize; k];
        for (a, s) in assignment.iter().zip(samples) {
            counts[*a] += 1;
            for d in 0..3 {
                sums[*a][d] += s[d];
            }
        }
        let mut moved: f64 = 0.0;
        for j in 0..k {
            let next = if counts[j] > 0 {
                sums[j].map(|v| v / counts[j] as f64)
            } else {
                // empty cluster: restart it at the worst-represented sample
                let (far, _) = samples
                    .iter()
                    .enumerate()
                    .map(|(i, s)| (i, nearest(&centroids, *s).1))
                    .fold((0, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
                samples[far]
            };
            moved = moved.max(dist(next, centroids[j]));
            centroids[j] = next;
        }
        if moved <= opts.convergence {
            break;
        }
    }
    for (a, s) in assignment.iter_mut().zip(samples) {
        *a = nearest(&centroids, *s).0;
    }
    (centroids, assignment)
}

/// Shares of each cluster averaged when pushing centroids outward.
const EXPANSION_FRACTIONS: [f64; 3] = [0.1, 0.02, 0.0];

/// Moves each centroid to the mean of the most extreme `fraction` of its
/// cluster (at least one member), measured along the direction away from the
/// overall sample mean. Cluster centroids sit inside the data's hull; these
/// variants reach toward its corners.
fn expand_toward_hull(
    samples: &[[f64; 3]],
    assignment: &[usize],
    centroids: &[[f64; 3]],
    mean: [f64; 3],
    fraction: f64,
) -> Vec<[f64; 3]> {
    centroids
        .iter()
        .enumerate()
        .map(|(j, &c)| {
            let dir = sub(c, mean);
            let norm = dot(dir, dir).sqrt();
            let members: Vec<[f64; 3]> = samples
                .iter()
                .zip(assignment)
                .filter(|(_, &a)| a == j)
                .map(|(s, _)| *s)
                .collect();
            if norm <= 1e-12 || members.is_empty() {
                return c;
            }
            let mut proj: Vec<(f64, usize)> = members
                .iter()
                .enumerate()
                .map(|(i, s)| (dot(sub(*s, mean), dir), i))
                .collect();
            proj.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let take = ((members.len() as f64 * fraction) as usize).max(1);
            let mut acc = [0.0; 3];
            for &(_, i) in &proj[..take] {
                for d in 0..3 {
                    acc[d] += members[i][d];
                }
            }
            acc.map(|v| v / take as f64)
        })
        .collect()
}

fn is_separated(colors: &[[f64; 3]]) -> bool {
    (0..colors.len()).all(|i| {
        (i + 1..colors.len()).all(|j| dist(colors[i], colors[j]) > MIN_COLOR_SEPARATION)
    })
}

fn score_palette(samples: &[[f64; 3]], colors: &[[f64; 3]], hull_weight: f64) -> f64 {
    let mut coverage = 0.0;
    let mut hull = 0.0;
    for s in samples {
        coverage += nearest(colors, *s).1.sqrt();
        hull += hull_distance(*s, colors).expect("palette is nonempty");
    }
    let m = samples.len() as f64;
    -(coverage / m) - hull_weight * (hull / m)
}
