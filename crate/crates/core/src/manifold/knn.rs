//! Exact k-nearest-neighbor search over small fixed-dimension points.
//!
//! A kd-tree prunes a cell only when its box is strictly farther than the
//! current k-th candidate, so results (including the lower-index tie rule)
//! are identical to a brute-force scan.

use crate::error::{Error, Result};

const LEAF_SIZE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

/// Per-query neighbors, nearest first.
pub type NeighborList = Vec<Vec<Neighbor>>;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        dim: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
pub struct KdTree<const D: usize> {
    points: Vec<[f64; D]>,
    /// Points in tree order; leaves own contiguous ranges.
    sorted: Vec<[f64; D]>,
    /// Original index of each entry of `sorted`.
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[inline]
pub fn squared_distance<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    let mut s = 0.0;
    for i in 0..D {
        let d = a[i] - b[i];
        s += d * d;
    }
    s
}

/// Search state: candidates sorted by (distance², index).
struct Search<'a, const D: usize> {
    query: &'a [f64; D],
    k: usize,
    exclude: Option<usize>,
    /// Known upper bound on the k-th distance² while fewer than k are held.
    bound: f64,
    best: &'a mut Vec<(f64, usize)>,
}

impl<const D: usize> Search<'_, D> {
    #[inline]
    fn threshold(&self) -> f64 {
        if self.best.len() == self.k {
            self.best[self.k - 1].0
        } else {
            self.bound
        }
    }

    #[inline]
    fn offer(&mut self, d2: f64, i: usize) {
        let key = (d2, i);
        let less = |a: &(f64, usize), b: &(f64, usize)| a.0 < b.0 || (a.0 == b.0 && a.1 < b.1);
        if self.best.len() == self.k {
            if !less(&key, &self.best[self.k - 1]) {
                return;
            }
            self.best.pop();
        }
        let pos = self.best.partition_point(|e| less(e, &key));
        self.best.insert(pos, key);
    }
}

impl<const D: usize> KdTree<D> {
    pub fn new(points: &[[f64; D]]) -> Self {
        let mut tree = Self {
            points: points.to_vec(),
            sorted: Vec::new(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree.sorted = tree.order.iter().map(|&i| tree.points[i]).collect();
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut dim = 0;
        let mut spread = f64::NEG_INFINITY;
        for d in 0..D {
            let (lo, hi) = self.order[start..end]
                .iter()
                .map(|&i| self.points[i][d])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    (lo.min(v), hi.max(v))
                });
            if hi - lo > spread {
                spread = hi - lo;
                dim = d;
            }
        }
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][dim].total_cmp(&points[b][dim]).then(a.cmp(&b))
        });
        let value = self.points[self.order[mid]][dim];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split {
            dim,
            value,
            left,
            right,
        };
        id
    }

    /// The `k` nearest points to `query`, skipping index `exclude`.
    /// Ordered by distance, then by lower index.
    pub fn nearest(&self, query: &[f64; D], k: usize, exclude: Option<usize>) -> Vec<Neighbor> {
        let mut best = Vec::with_capacity(k + 1);
        self.nearest_into(query, k, exclude, &[], &mut best);
        best.into_iter()
            .map(|(d2, index)| Neighbor {
                index,
                distance: d2.sqrt(),
            })
            .collect()
    }

    /// Like [`KdTree::nearest`], writing `(distance², index)` pairs into
    /// `best`. Any `k` distinct candidate indices in `hint` (for example a
    /// nearby query's answer) only tighten the search; the result is the same.
    pub fn nearest_into(
        &self,
        query: &[f64; D],
        k: usize,
        exclude: Option<usize>,
        hint: &[usize],
        best: &mut Vec<(f64, usize)>,
    ) {
        best.clear();
        if k == 0 || self.nodes.is_empty() {
            return;
        }
        let mut bound = f64::INFINITY;
        if hint.len() >= k && !hint.iter().any(|&h| Some(h) == exclude) {
            bound = hint[..k]
                .iter()
                .map(|&h| squared_distance(query, &self.points[h]))
                .fold(0.0, f64::max);
        }
        let mut search = Search {
            query,
            k,
            exclude,
            bound,
            best,
        };
        let mut off = [0.0; D];
        self.search(0, 0.0, &mut off, &mut search);
    }

    /// `rd` is a lower bound on the squared distance from the query to the
    /// node's cell, built from the per-dimension offsets in `off`.
    fn search(&self, node: usize, rd: f64, off: &mut [f64; D], s: &mut Search<'_, D>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for (p, &i) in self.sorted[start..end].iter().zip(&self.order[start..end]) {
                    let d2 = squared_distance(s.query, p);
                    if d2 <= s.threshold() && Some(i) != s.exclude {
                        s.offer(d2, i);
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = s.query[dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, rd, off, s);
                let old = off[dim];
                let far_rd = rd - old * old + diff * diff;
                if far_rd <= s.threshold() {
                    off[dim] = diff;
                    self.search(far, far_rd, off, s);
                    off[dim] = old;
                }
            }
        }
    }
}

/// Exact Euclidean k-NN of each query against `corpus`.
///
/// With `exclude_self`, query `i` is taken to be corpus point `i` and that
/// index is never reported for it.
pub fn knn<const D: usize>(
    queries: &[[f64; D]],
    corpus: &[[f64; D]],
    k: usize,
    exclude_self: bool,
) -> Result<NeighborList> {
    let available = corpus.len().saturating_sub(exclude_self as usize);
    if k > available || (exclude_self && queries.len() > corpus.len()) {
        return Err(Error::NeighborCount {
            k,
            corpus: corpus.len(),
        });
    }
    let tree = KdTree::new(corpus);
    Ok(queries
        .iter()
        .enumerate()
        .map(|(i, q)| tree.nearest(q, k, exclude_self.then_some(i)))
        .collect())
}
