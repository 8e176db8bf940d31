//! Non-negative sparse matrices in compressed row form.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Compressed-row matrix with strictly positive stored values.
///
/// Entries are sorted by `(row, col)`; explicit zeros and duplicates are
/// never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        SparseMatrix {
            n_rows,
            n_cols,
            indptr: vec![0; n_rows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Assembles a matrix from `(row, col, value)` triplets in any order.
    /// Duplicates are summed and zero sums dropped.
    pub fn from_triplets<I>(n_rows: usize, n_cols: usize, triplets: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let mut entries: Vec<(usize, usize, f64)> = Vec::new();
        for (r, c, v) in triplets {
            if r >= n_rows || c >= n_cols {
                return Err(Error::DimensionMismatch(format!(
                    "entry ({r}, {c}) outside a {n_rows}x{n_cols} matrix"
                )));
            }
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::NonNegativityViolation {
                    row: r,
                    col: c,
                    value: v,
                });
            }
            // non-negative parts cannot cancel, so zeros can go before merging
            if v > 0.0 {
                entries.push((r, c, v));
            }
        }
        entries.sort_by_key(|&(r, c, _)| (r, c));

        let mut indptr = vec![0usize; n_rows + 1];
        let mut indices = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in entries {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            indices.push(c);
            values.push(v);
            indptr[r + 1] += 1;
            last = Some((r, c));
        }
        for i in 0..n_rows {
            indptr[i + 1] += indptr[i];
        }
        Ok(SparseMatrix {
            n_rows,
            n_cols,
            indptr,
            indices,
            values,
        })
    }

    pub fn from_dense(dense: ArrayView2<'_, f64>) -> Result<Self> {
        let (n_rows, n_cols) = dense.dim();
        let mut indptr = Vec::with_capacity(n_rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for (r, row) in dense.outer_iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::NonNegativityViolation {
                        row: r,
                        col: c,
                        value: v,
                    });
                }
                if v > 0.0 {
                    indices.push(c);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Ok(SparseMatrix {
            n_rows,
            n_cols,
            indptr,
            indices,
            values,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_rows, self.n_cols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let span = self.indptr[i]..self.indptr[i + 1];
        (&self.indices[span.clone()], &self.values[span])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(p) => vals[p],
            Err(_) => 0.0,
        }
    }

    /// Stored entries in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Same sparsity pattern, values replaced by `f(row, col, value)`.
    /// Results that are zero are dropped.
    pub fn map_entries(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> Result<Self> {
        let triplets: Vec<_> = self.iter().map(|(i, j, v)| (i, j, f(i, j, v))).collect();
        Self::from_triplets(self.n_rows, self.n_cols, triplets)
    }

    pub fn scale(&self, factor: f64) -> Result<Self> {
        self.map_entries(|_, _, v| v * factor)
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n_rows, self.n_cols));
        for (i, j, v) in self.iter() {
            out[[i, j]] = v;
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &j in &self.indices {
            counts[j + 1] += 1;
        }
        for j in 0..self.n_cols {
            counts[j + 1] += counts[j];
        }
        let indptr = counts.clone();
        let mut next = counts;
        let mut indices = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for (i, j, v) in self.iter() {
            let p = next[j];
            indices[p] = i;
            values[p] = v;
            next[j] += 1;
        }
        SparseMatrix {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            indptr,
            indices,
            values,
        }
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Mean over all `n_rows * n_cols` positions, zeros included.
    pub fn mean(&self) -> f64 {
        let size = self.n_rows * self.n_cols;
        if size == 0 {
            0.0
        } else {
            self.sum() / size as f64
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n_rows)
            .map(|i| self.row(i).1.iter().sum())
            .collect()
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn is_symmetric(&self) -> bool {
        self.n_rows == self.n_cols && self.iter().all(|(i, j, v)| self.get(j, i) == v)
    }

    /// `self * rhs_t^T` for a row-major `rhs_t` of shape `n_cols x k`.
    /// Returns a row-major `n_rows x k` buffer.
    pub(crate) fn mul_transposed(&self, rhs_t: &[f64], k: usize) -> Vec<f64> {
        debug_assert_eq!(rhs_t.len(), self.n_cols * k);
        let mut out = vec![0.0; self.n_rows * k];
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            let dst = &mut out[i * k..(i + 1) * k];
            for (&j, &x) in cols.iter().zip(vals) {
                let src = &rhs_t[j * k..(j + 1) * k];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += x * s;
                }
            }
        }
        out
    }

    /// `self^T * lhs` for a row-major `lhs` of shape `n_rows x k`.
    /// Returns a row-major `n_cols x k` buffer.
    pub(crate) fn transpose_mul(&self, lhs: &[f64], k: usize) -> Vec<f64> {
        debug_assert_eq!(lhs.len(), self.n_rows * k);
        let mut out = vec![0.0; self.n_cols * k];
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            let src = &lhs[i * k..(i + 1) * k];
            for (&j, &x) in cols.iter().zip(vals) {
                let dst = &mut out[j * k..(j + 1) * k];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += x * s;
                }
            }
        }
        out
    }
}
