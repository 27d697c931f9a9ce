//! Compressed sparse row storage and the block accumulator used by assembly.

use std::io::Write;

use faer::sparse::{SparseColMat, SymbolicSparseColMat};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Row-major sparse matrix with sorted column indices in every row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix row by row; `row(i, out)` pushes `(col, value)` pairs in increasing column order.
    pub fn from_rows(
        nrows: usize,
        ncols: usize,
        mut row: impl FnMut(usize, &mut Vec<(usize, f64)>),
    ) -> Self {
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        let mut buf = Vec::new();
        row_ptr.push(0);
        for i in 0..nrows {
            buf.clear();
            row(i, &mut buf);
            debug_assert!(
                buf.windows(2).all(|w| w[0].0 < w[1].0),
                "row {i} columns not increasing"
            );
            for &(j, v) in &buf {
                col_idx.push(j);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_rows(n, n, |i, out| out.push((i, 1.0)))
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        Self::from_rows(m.nrows(), m.ncols(), |i, out| {
            for j in 0..m.ncols() {
                if m[(i, j)] != 0.0 {
                    out.push((j, m[(i, j)]));
                }
            }
        })
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()]
            .iter()
            .copied()
            .zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(pos) => self.values[r.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols))
            .map(|i| self.get(i, i))
            .collect()
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        for (i, yi) in y.iter_mut().enumerate().take(self.nrows) {
            *yi = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }

    /// `y = A^T x`.
    pub fn mul_transpose_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for (i, xi) in x.iter().enumerate() {
            for (j, v) in self.row(i) {
                y[j] += v * xi;
            }
        }
        y
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.ncols + 1];
        for &j in &self.col_idx {
            counts[j + 1] += 1;
        }
        for j in 0..self.ncols {
            counts[j + 1] += counts[j];
        }
        let row_ptr = counts.clone();
        let mut next = counts;
        let mut col_idx = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                col_idx[next[j]] = i;
                values[next[j]] = v;
                next[j] += 1;
            }
        }
        Self {
            nrows: self.ncols,
            ncols: self.nrows,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Largest `|A_ij - A_ji|` (zero for exactly symmetric matrices).
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// Column-major copy for the sparse factorizations.
    ///
    /// For symmetric matrices the row structure is reused directly.
    pub fn to_faer(&self) -> Result<SparseColMat<usize, f64>> {
        let t = self.transpose();
        let symbolic =
            SymbolicSparseColMat::new_checked(self.nrows, self.ncols, t.row_ptr, None, t.col_idx);
        Ok(SparseColMat::new(symbolic, t.values))
    }

    /// `A - shift I` (square matrices with a stored diagonal).
    pub fn shifted(&self, shift: f64) -> Result<Self> {
        let mut out = self.clone();
        for i in 0..self.nrows {
            let r = self.row_ptr[i]..self.row_ptr[i + 1];
            let pos =
                self.col_idx[r.clone()]
                    .binary_search(&i)
                    .map_err(|_| Error::SingularSystem {
                        reason: format!("row {i} has no stored diagonal"),
                    })?;
            out.values[r.start + pos] -= shift;
        }
        Ok(out)
    }

    /// Writes `row col value` triplets (0-based).
    pub fn write_triplets(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "% {} {} {}", self.nrows, self.ncols, self.nnz())?;
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                writeln!(out, "{i} {j} {v:.17e}")?;
            }
        }
        Ok(())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn to_dvector(v: Vec<f64>) -> DVector<f64> {
    DVector::from_vec(v)
}

/// Dense `rows × cols` blocks keyed by (element, coupled element).
#[derive(Debug, Clone)]
pub struct BlockAccumulator {
    couplings: Vec<Vec<usize>>,
    start: Vec<usize>,
    pub block_rows: usize,
    pub block_cols: usize,
    data: Vec<f64>,
}

impl BlockAccumulator {
    pub fn new(couplings: Vec<Vec<usize>>, block_rows: usize, block_cols: usize) -> Self {
        let mut start = Vec::with_capacity(couplings.len() + 1);
        start.push(0);
        for c in &couplings {
            start.push(start.last().unwrap() + c.len());
        }
        let data = vec![0.0; start.last().unwrap() * block_rows * block_cols];
        Self {
            couplings,
            start,
            block_rows,
            block_cols,
            data,
        }
    }

    pub fn couplings(&self, k: usize) -> &[usize] {
        &self.couplings[k]
    }

    fn slot(&self, k: usize, l: usize) -> usize {
        let pos = self.couplings[k]
            .binary_search(&l)
            .expect("elements are not coupled");
        (self.start[k] + pos) * self.block_rows * self.block_cols
    }

    /// Row-major block for the pair `(k, l)`.
    pub fn block_mut(&mut self, k: usize, l: usize) -> &mut [f64] {
        let s = self.slot(k, l);
        &mut self.data[s..s + self.block_rows * self.block_cols]
    }

    pub fn block(&self, k: usize, l: usize) -> &[f64] {
        let s = self.slot(k, l);
        &self.data[s..s + self.block_rows * self.block_cols]
    }

    /// Copies the transpose of every block with `k < l` into `(l, k)` and the
    /// upper triangle of diagonal blocks into their lower triangle.
    pub fn mirror_upper(&mut self) {
        assert_eq!(self.block_rows, self.block_cols);
        let n = self.block_rows;
        for k in 0..self.couplings.len() {
            for idx in 0..self.couplings[k].len() {
                let l = self.couplings[k][idx];
                if l < k {
                    continue;
                }
                let src = self.block(k, l).to_vec();
                let dst = self.block_mut(l, k);
                for i in 0..n {
                    for j in 0..n {
                        if l == k && j >= i {
                            continue;
                        }
                        if l == k {
                            dst[i * n + j] = src[j * n + i];
                        } else {
                            dst[j * n + i] = src[i * n + j];
                        }
                    }
                }
            }
        }
    }
}
