//! Shared fixtures: a synthetic desk-scene corpus and dense reference solvers.

#![allow(dead_code)]

use layerbuild::manifold::SparseRowMatrix;
use layerbuild::palette::Palette;
use layerbuild::pixel::{PixelCoord, PixelVolume};
use layerbuild::solver::{Constraint, ConstraintSet, ConstraintSource, SolverParams};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CORPUS_SIZE: usize = 10;
pub const CORPUS_DIM: usize = 256;

fn scale(c: [f32; 3], s: f32) -> [f32; 3] {
    c.map(|v| (v * s).clamp(0.0, 1.0))
}

enum Shape {
    Rect { x0: f32, y0: f32, x1: f32, y1: f32 },
    Ellipse { cx: f32, cy: f32, rx: f32, ry: f32 },
}

impl Shape {
    fn contains(&self, x: f32, y: f32) -> bool {
        match *self {
            Shape::Rect { x0, y0, x1, y1 } => x >= x0 && x < x1 && y >= y0 && y < y1,
            Shape::Ellipse { cx, cy, rx, ry } => ((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2) <= 1.0,
        }
    }

    fn shifted(&self, dx: f32, dy: f32) -> Shape {
        match *self {
            Shape::Rect { x0, y0, x1, y1 } => Shape::Rect {
                x0: x0 + dx,
                y0: y0 + dy,
                x1: x1 + dx,
                y1: y1 + dy,
            },
            Shape::Ellipse { cx, cy, rx, ry } => Shape::Ellipse {
                cx: cx + dx,
                cy: cy + dy,
                rx,
                ry,
            },
        }
    }
}

struct Object {
    shape: Shape,
    color: [f32; 3],
    /// Shading direction across the object.
    tilt: [f32; 2],
}

/// A tabletop seen from above: a lit wooden desk with papers, books and mugs
/// casting soft shadows. Same index, same pixels.
pub fn desk_scene(index: usize, size: usize) -> PixelVolume {
    let mut rng = ChaCha8Rng::seed_from_u64(0xDE5C + index as u64);
    let wood = [
        rng.gen_range(0.45..0.7),
        rng.gen_range(0.28..0.42),
        rng.gen_range(0.12..0.22),
    ];
    let grain_freq = rng.gen_range(0.05..0.12);
    let light = [rng.gen_range(-0.3..0.3f32), rng.gen_range(-0.3..0.3f32)];
    let accents: [[f32; 3]; 4] = [
        [0.93, 0.93, 0.9],
        [rng.gen_range(0.6..0.9), rng.gen_range(0.05..0.2), rng.gen_range(0.05..0.2)],
        [rng.gen_range(0.05..0.2), rng.gen_range(0.2..0.45), rng.gen_range(0.55..0.85)],
        [rng.gen_range(0.1..0.3), rng.gen_range(0.45..0.7), rng.gen_range(0.2..0.4)],
    ];
    let s = size as f32;
    let objects: Vec<Object> = (0..rng.gen_range(4..8))
        .map(|_| {
            let color = accents[rng.gen_range(0..accents.len())];
            let shape = if rng.gen_bool(0.6) {
                let w = rng.gen_range(0.15..0.4) * s;
                let h = rng.gen_range(0.1..0.35) * s;
                let x0 = rng.gen_range(0.0..s - w);
                let y0 = rng.gen_range(0.0..s - h);
                Shape::Rect {
                    x0,
                    y0,
                    x1: x0 + w,
                    y1: y0 + h,
                }
            } else {
                let r = rng.gen_range(0.06..0.14) * s;
                Shape::Ellipse {
                    cx: rng.gen_range(r..s - r),
                    cy: rng.gen_range(r..s - r),
                    rx: r,
                    ry: r * rng.gen_range(0.8..1.0),
                }
            };
            Object {
                shape,
                color,
                tilt: [rng.gen_range(-0.15..0.15), rng.gen_range(-0.15..0.15)],
            }
        })
        .collect();
    let shadow = [0.03 * s, 0.04 * s];
    let noise: Vec<f32> = (0..size * size).map(|_| rng.gen_range(-0.01..0.01)).collect();

    // 2x2 supersampling for anti-aliased edges
    let sample = |x: f32, y: f32| -> [f32; 3] {
        let (u, v) = (x / s - 0.5, y / s - 0.5);
        let lit = 1.0 + light[0] * u + light[1] * v;
        let grain = 0.06 * ((x + 7.0 * (y * 0.02).sin()) * grain_freq).sin();
        let mut c = scale(wood, lit + grain);
        for o in &objects {
            if o.shape.shifted(shadow[0], shadow[1]).contains(x, y) {
                c = scale(c, 0.72);
            }
            if o.shape.contains(x, y) {
                c = scale(o.color, lit + o.tilt[0] * u + o.tilt[1] * v);
            }
        }
        c
    };
    PixelVolume::from_fn(size, size, 1, |p| {
        let mut acc = [0.0f32; 3];
        for (ox, oy) in [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)] {
            let c = sample(p.x as f32 + ox, p.y as f32 + oy);
            for d in 0..3 {
                acc[d] += 0.25 * c[d];
            }
        }
        let n = noise[p.y * size + p.x];
        acc.map(|v| (v + n).clamp(0.0, 1.0))
    })
    .unwrap()
}

pub fn desk_corpus() -> Vec<PixelVolume> {
    (0..CORPUS_SIZE).map(|i| desk_scene(i, CORPUS_DIM)).collect()
}

/// Piecewise-constant image whose regions take exactly the palette colors.
pub fn indicator_image(palette: &Palette, width: usize, height: usize, block: usize) -> PixelVolume {
    let n = palette.len();
    PixelVolume::from_fn(width, height, 1, |c| {
        let cell = (c.x / block) + (c.y / block) * width.div_ceil(block);
        palette.colors()[(cell * 7 + c.y / block) % n]
    })
    .unwrap()
}

/// LLE weights by the bordered KKT system
/// `[G 1; 1ᵀ 0] [w; μ] = [0; 1]` with the same regularization, solved by LU.
pub fn lle_kkt(target: &[f64], neighbors: &[Vec<f64>]) -> Vec<f64> {
    let k = neighbors.len();
    let d: Vec<DVector<f64>> = neighbors
        .iter()
        .map(|n| DVector::from_iterator(target.len(), n.iter().zip(target).map(|(a, b)| a - b)))
        .collect();
    let mut g = DMatrix::from_fn(k, k, |i, j| d[i].dot(&d[j]));
    let trace = g.trace();
    let reg = if trace > 0.0 { 1e-3 * trace } else { 1e-6 };
    for i in 0..k {
        g[(i, i)] += reg;
    }
    let mut m = DMatrix::zeros(k + 1, k + 1);
    m.view_mut((0, 0), (k, k)).copy_from(&g);
    for i in 0..k {
        m[(i, k)] = 1.0;
        m[(k, i)] = 1.0;
    }
    let mut rhs = DVector::zeros(k + 1);
    rhs[k] = 1.0;
    let sol = m.lu().solve(&rhs).expect("bordered system is nonsingular");
    sol.iter().take(k).copied().collect()
}

/// Normal equations built densely from the definitions of the four energy
/// terms: `A = Σ λ Pᵀ P`, `b = Σ λ Pᵀ t` for each term `λ |P x - t|²`.
pub fn dense_normal_system(
    w: &SparseRowMatrix,
    palette: &Palette,
    colors: &[[f64; 3]],
    constraints: &ConstraintSet,
    params: &SolverParams,
) -> (DMatrix<f64>, DVector<f64>) {
    let s = w.rows();
    let n = palette.len();
    let sn = s * n;
    let wd = DMatrix::from_fn(s, s, |r, c| w.get(r, c));
    let i_minus_w = DMatrix::<f64>::identity(s, s) - wd;
    // M: block diagonal copies of (I - W)
    let mut m = DMatrix::zeros(sn, sn);
    for j in 0..n {
        m.view_mut((j * s, j * s), (s, s)).copy_from(&i_minus_w);
    }
    // R: 3S x SN, block (d, j) = c_dj I
    let mut r = DMatrix::zeros(3 * s, sn);
    let mut bhat = DVector::zeros(3 * s);
    for d in 0..3 {
        for sp in 0..s {
            bhat[d * s + sp] = colors[sp][d];
            for j in 0..n {
                r[(d * s + sp, j * s + sp)] = palette.color(j)[d];
            }
        }
    }
    // U: S x SN summing layers
    let mut u = DMatrix::zeros(s, sn);
    for sp in 0..s {
        for j in 0..n {
            u[(sp, j * s + sp)] = 1.0;
        }
    }
    // E: one selector row per constraint, weighted
    let k = constraints.len();
    let mut e = DMatrix::zeros(k, sn);
    let mut t = DVector::zeros(k);
    let mut lam = DVector::zeros(k);
    for (row, c) in constraints.entries().iter().enumerate() {
        e[(row, c.layer * s + c.superpixel)] = 1.0;
        t[row] = c.target;
        lam[row] = match c.source {
            ConstraintSource::Suppression => params.lambda_n,
            _ => params.lambda_e,
        };
    }
    let le = DMatrix::from_diagonal(&lam);
    let a = m.transpose() * &m * params.lambda_m
        + r.transpose() * &r * params.lambda_r
        + u.transpose() * &u * params.lambda_u
        + e.transpose() * &le * &e;
    let b = r.transpose() * bhat * params.lambda_r
        + u.transpose() * DVector::from_element(s, 1.0) * params.lambda_u
        + e.transpose() * (le * t);
    (a, b)
}

/// Final values from replaying a suppression schedule with dense LU solves.
/// `schedule[i]` lists the layer-major indices suppressed before solve `i`.
pub fn dense_replay(
    w: &SparseRowMatrix,
    palette: &Palette,
    colors: &[[f64; 3]],
    constraints: &ConstraintSet,
    params: &SolverParams,
    schedule: &[Vec<usize>],
) -> Vec<f64> {
    let s = w.rows();
    let mut set = constraints.clone();
    let mut x = DVector::zeros(s * palette.len());
    for step in schedule {
        for &idx in step {
            set.insert(Constraint {
                superpixel: idx % s,
                layer: idx / s,
                target: 0.0,
                source: ConstraintSource::Suppression,
            })
            .unwrap();
        }
        let (a, b) = dense_normal_system(w, palette, colors, &set, params);
        x = a.lu().solve(&b).expect("system is nonsingular");
    }
    x.iter().copied().collect()
}

/// Random row-stochastic sparse matrix without self loops.
pub fn random_w(rng: &mut ChaCha8Rng, s: usize, k: usize) -> SparseRowMatrix {
    let rows = (0..s)
        .map(|r| {
            if s == 1 {
                return vec![];
            }
            let mut cols: Vec<usize> = (0..s).filter(|&c| c != r).collect();
            let take = k.min(cols.len());
            for i in 0..take {
                let j = rng.gen_range(i..cols.len());
                cols.swap(i, j);
            }
            let raw: Vec<f64> = (0..take).map(|_| rng.gen_range(-0.3..1.0)).collect();
            let sum: f64 = raw.iter().sum::<f64>();
            let sum = if sum.abs() < 1e-3 { 1.0 } else { sum };
            cols[..take].iter().zip(raw).map(|(&c, v)| (c, v / sum)).collect()
        })
        .collect();
    SparseRowMatrix::from_rows(s, rows).unwrap()
}

pub fn random_palette(rng: &mut ChaCha8Rng, n: usize) -> Palette {
    loop {
        let colors: Vec<[f32; 3]> = (0..n).map(|_| std::array::from_fn(|_| rng.gen::<f32>())).collect();
        if let Ok(p) = Palette::new(colors) {
            return p;
        }
    }
}

/// A camera panning across a larger desk scene: frame `t` is the window at
/// offset `(2t, t)`.
pub fn desk_video(index: usize, width: usize, height: usize, frames: usize) -> PixelVolume {
    let size = (width + 2 * frames).max(height + frames);
    let scene = desk_scene(index, size);
    let stills: Vec<PixelVolume> = (0..frames)
        .map(|t| PixelVolume::from_fn(width, height, 1, |c| scene.at(PixelCoord { x: c.x + 2 * t, y: c.y + t, t: 0 })).unwrap())
        .collect();
    PixelVolume::stack(&stills).unwrap()
}
