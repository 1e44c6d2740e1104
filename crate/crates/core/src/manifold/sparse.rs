use crate::error::{Error, Result};

/// Compressed sparse row matrix with strictly increasing column indices per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRowMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl SparseRowMatrix {
    /// Builds a matrix from per-row `(column, value)` lists. Entries are sorted
    /// by column and duplicates summed.
    pub fn from_rows(cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let nnz: usize = rows.iter().map(Vec::len).sum();
        let mut indices = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        row_ptr.push(0);
        let n_rows = rows.len();
        for (r, mut row) in rows.into_iter().enumerate() {
            row.sort_by_key(|&(c, _)| c);
            for (c, v) in row {
                if c >= cols {
                    return Err(Error::DimensionMismatch(format!(
                        "column {c} out of range in row {r} of a {cols}-column matrix"
                    )));
                }
                if indices.len() > row_ptr[r] && *indices.last().unwrap() as usize == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    indices.push(c as u32);
                    values.push(v);
                }
            }
            row_ptr.push(indices.len());
        }
        Ok(Self {
            rows: n_rows,
            cols,
            row_ptr,
            indices,
            values,
        })
    }

    /// Assembles from raw CSR arrays that already satisfy the invariants.
    pub(crate) fn from_csr(
        rows: usize,
        cols: usize,
        row_ptr: Vec<usize>,
        indices: Vec<u32>,
        values: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(row_ptr.len(), rows + 1);
        debug_assert_eq!(indices.len(), values.len());
        debug_assert!((0..rows).all(|r| {
            let idx = &indices[row_ptr[r]..row_ptr[r + 1]];
            idx.windows(2).all(|w| w[0] < w[1]) && idx.iter().all(|&c| (c as usize) < cols)
        }));
        Self {
            rows,
            cols,
            row_ptr,
            indices,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_csr(
            n,
            n,
            (0..=n).collect(),
            (0..n as u32).collect(),
            vec![1.0; n],
        )
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn row(&self, r: usize) -> (&[u32], &[f64]) {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.indices[span.clone()], &self.values[span])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (idx, vals) = self.row(r);
        match idx.binary_search(&(c as u32)) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|r| self.row(r).1.iter().sum()).collect()
    }

    /// `y = self * x`.
    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::DimensionMismatch(format!(
                "vector of length {} for a matrix with {} columns",
                x.len(),
                self.cols
            )));
        }
        let mut y = vec![0.0; self.rows];
        self.mul_vec_into(x, &mut y);
        Ok(y)
    }

    /// Row-by-row product; each output entry is summed in column order, so the
    /// result does not depend on how rows are scheduled.
    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        for (r, out) in y.iter_mut().enumerate() {
            let (idx, vals) = self.row(r);
            let mut acc = 0.0;
            for (&c, &v) in idx.iter().zip(vals) {
                acc += v * x[c as usize];
            }
            *out = acc;
        }
    }

    /// Same as [`Self::mul_vec_into`], with rows split across threads.
    pub fn par_mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        use rayon::prelude::*;
        const CHUNK: usize = 2048;
        y.par_chunks_mut(CHUNK).enumerate().for_each(|(c, out)| {
            for (i, o) in out.iter_mut().enumerate() {
                let (idx, vals) = self.row(c * CHUNK + i);
                let mut acc = 0.0;
                for (&col, &v) in idx.iter().zip(vals) {
                    acc += v * x[col as usize];
                }
                *o = acc;
            }
        });
    }

    /// Adds `v` to an entry that is already stored. Returns false when the
    /// entry is structurally zero.
    pub fn add_to_stored(&mut self, r: usize, c: usize, v: f64) -> bool {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.indices[span.clone()].binary_search(&(c as u32)) {
            Ok(k) => {
                self.values[span.start + k] += v;
                true
            }
            Err(_) => false,
        }
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.cols + 1];
        for &c in &self.indices {
            counts[c as usize + 1] += 1;
        }
        for i in 0..self.cols {
            counts[i + 1] += counts[i];
        }
        let row_ptr = counts.clone();
        let mut next = counts;
        let mut indices = vec![0u32; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for r in 0..self.rows {
            let (idx, vals) = self.row(r);
            for (&c, &v) in idx.iter().zip(vals) {
                let slot = next[c as usize];
                indices[slot] = r as u32;
                values[slot] = v;
                next[c as usize] += 1;
            }
        }
        Self::from_csr(self.cols, self.rows, row_ptr, indices, values)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.cols]; self.rows];
        for (r, row) in out.iter_mut().enumerate() {
            let (idx, vals) = self.row(r);
            for (&c, &v) in idx.iter().zip(vals) {
                row[c as usize] = v;
            }
        }
        out
    }
}
