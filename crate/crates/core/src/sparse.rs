//! Row-compressed sparse matrix with sorted column indices.
//!
//! Iteration order is fully determined by the storage layout, so every
//! product below accumulates in the same order on every run.

use ndarray::{Array2, ArrayView2};

use crate::error::{FedglError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        CsrMatrix {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            data: vec![1.0; n],
        }
    }

    /// Builds from raw CSR arrays, checking structure.
    pub fn from_raw(
        nrows: usize,
        ncols: usize,
        indptr: Vec<usize>,
        indices: Vec<usize>,
        data: Vec<f64>,
    ) -> Result<Self> {
        if indptr.len() != nrows + 1 || indptr[0] != 0 || *indptr.last().unwrap() != indices.len() {
            return Err(FedglError::validation("malformed CSR row pointer"));
        }
        if indices.len() != data.len() {
            return Err(FedglError::validation("CSR index/data length mismatch"));
        }
        for r in 0..nrows {
            if indptr[r] > indptr[r + 1] {
                return Err(FedglError::validation("CSR row pointer not monotone"));
            }
            let row = &indices[indptr[r]..indptr[r + 1]];
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(FedglError::validation("CSR column indices not strictly sorted"));
            }
            if row.last().is_some_and(|&c| c >= ncols) {
                return Err(FedglError::validation("CSR column index out of range"));
            }
        }
        Ok(CsrMatrix {
            nrows,
            ncols,
            indptr,
            indices,
            data,
        })
    }

    /// Builds from (row, col, value) triplets; duplicate coordinates are summed.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut entries: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        for &(r, c, _) in &entries {
            if r >= nrows || c >= ncols {
                return Err(FedglError::validation(format!(
                    "entry ({r}, {c}) outside {nrows}x{ncols} matrix"
                )));
            }
        }
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(entries.len());
        let mut data: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in entries {
            if last == Some((r, c)) {
                *data.last_mut().unwrap() += v;
                continue;
            }
            indptr[r + 1] += 1;
            indices.push(c);
            data.push(v);
            last = Some((r, c));
        }
        for r in 0..nrows {
            indptr[r + 1] += indptr[r];
        }
        Ok(CsrMatrix {
            nrows,
            ncols,
            indptr,
            indices,
            data,
        })
    }

    /// Builds from per-row entry lists that are already sorted by column.
    pub(crate) fn from_sorted_rows(ncols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let nrows = rows.len();
        let mut indptr = Vec::with_capacity(nrows + 1);
        indptr.push(0);
        let nnz = rows.iter().map(Vec::len).sum();
        let mut indices = Vec::with_capacity(nnz);
        let mut data = Vec::with_capacity(nnz);
        for row in rows {
            for (c, v) in row {
                debug_assert!(c < ncols);
                indices.push(c);
                data.push(v);
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            nrows,
            ncols,
            indptr,
            indices,
            data,
        }
    }

    pub fn from_dense(dense: &ArrayView2<f64>) -> Self {
        let rows = dense
            .rows()
            .into_iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(c, &v)| (c, v))
                    .collect()
            })
            .collect();
        Self::from_sorted_rows(dense.ncols(), rows)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nrows, self.ncols)
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.indptr[r]..self.indptr[r + 1];
        (&self.indices[span.clone()], &self.data[span])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    /// Iterates stored entries as (row, col, value) in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.nrows).map(|r| self.row(r).1.iter().sum()).collect()
    }

    pub fn row_nnz(&self, r: usize) -> usize {
        self.indptr[r + 1] - self.indptr[r]
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.ncols + 1];
        for &c in &self.indices {
            counts[c + 1] += 1;
        }
        for c in 0..self.ncols {
            counts[c + 1] += counts[c];
        }
        let indptr = counts.clone();
        let mut next = counts;
        let mut indices = vec![0usize; self.nnz()];
        let mut data = vec![0.0; self.nnz()];
        for (r, c, v) in self.iter() {
            let dest = next[c];
            indices[dest] = r;
            data[dest] = v;
            next[c] += 1;
        }
        CsrMatrix {
            nrows: self.ncols,
            ncols: self.nrows,
            indptr,
            indices,
            data,
        }
    }

    /// Exact structural and numeric symmetry.
    pub fn is_symmetric(&self) -> bool {
        self.nrows == self.ncols && *self == self.transpose()
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.nrows, self.ncols));
        for (r, c, v) in self.iter() {
            out[[r, c]] = v;
        }
        out
    }

    pub fn scale(&self, factor: f64) -> CsrMatrix {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= factor);
        out
    }

    /// Entrywise `self + factor * other`; entries that cancel to zero are kept.
    pub fn add_scaled(&self, other: &CsrMatrix, factor: f64) -> Result<CsrMatrix> {
        if self.shape() != other.shape() {
            return Err(FedglError::validation(format!(
                "cannot add {:?} and {:?} matrices",
                self.shape(),
                other.shape()
            )));
        }
        let mut rows = Vec::with_capacity(self.nrows);
        for r in 0..self.nrows {
            let (ac, av) = self.row(r);
            let (bc, bv) = other.row(r);
            let mut merged = Vec::with_capacity(ac.len() + bc.len());
            let (mut i, mut j) = (0, 0);
            while i < ac.len() || j < bc.len() {
                if j == bc.len() || (i < ac.len() && ac[i] < bc[j]) {
                    merged.push((ac[i], av[i]));
                    i += 1;
                } else if i == ac.len() || bc[j] < ac[i] {
                    merged.push((bc[j], factor * bv[j]));
                    j += 1;
                } else {
                    merged.push((ac[i], av[i] + factor * bv[j]));
                    i += 1;
                    j += 1;
                }
            }
            rows.push(merged);
        }
        Ok(CsrMatrix::from_sorted_rows(self.ncols, rows))
    }

    /// Square submatrix on `positions` (rows and columns), in the given order.
    /// Entries whose row or column is not selected are dropped.
    pub fn submatrix(&self, positions: &[usize]) -> CsrMatrix {
        let mut local = vec![usize::MAX; self.ncols];
        for (i, &p) in positions.iter().enumerate() {
            local[p] = i;
        }
        let rows = positions
            .iter()
            .map(|&p| {
                let (cols, vals) = self.row(p);
                let mut row: Vec<(usize, f64)> = cols
                    .iter()
                    .zip(vals)
                    .filter(|(&c, _)| local[c] != usize::MAX)
                    .map(|(&c, &v)| (local[c], v))
                    .collect();
                row.sort_by_key(|e| e.0);
                row
            })
            .collect();
        CsrMatrix::from_sorted_rows(positions.len(), rows)
    }

    /// Dense product `self · rhs`.
    pub fn matmul(&self, rhs: &ArrayView2<f64>) -> Array2<f64> {
        assert_eq!(self.ncols, rhs.nrows(), "sparse matmul shape mismatch");
        let k = rhs.ncols();
        let rhs = rhs.as_standard_layout();
        let b = rhs.as_slice().unwrap();
        let mut out = Array2::<f64>::zeros((self.nrows, k));
        {
            let o = out.as_slice_mut().unwrap();
            for r in 0..self.nrows {
                let dst = &mut o[r * k..(r + 1) * k];
                let (cols, vals) = self.row(r);
                for (&c, &v) in cols.iter().zip(vals) {
                    let src = &b[c * k..(c + 1) * k];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += v * s;
                    }
                }
            }
        }
        out
    }

    /// Dense product `selfᵀ · rhs` without materialising the transpose.
    pub fn transpose_matmul(&self, rhs: &ArrayView2<f64>) -> Array2<f64> {
        assert_eq!(self.nrows, rhs.nrows(), "sparse transpose matmul shape mismatch");
        let k = rhs.ncols();
        let rhs = rhs.as_standard_layout();
        let b = rhs.as_slice().unwrap();
        let mut out = Array2::<f64>::zeros((self.ncols, k));
        {
            let o = out.as_slice_mut().unwrap();
            for r in 0..self.nrows {
                let src = &b[r * k..(r + 1) * k];
                let (cols, vals) = self.row(r);
                for (&c, &v) in cols.iter().zip(vals) {
                    let dst = &mut o[c * k..(c + 1) * k];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += v * s;
                    }
                }
            }
        }
        out
    }
}
