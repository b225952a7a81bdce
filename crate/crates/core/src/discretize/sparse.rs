//! Compressed-row sparse matrices.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};

const PAR_ROWS: usize = 4096;

/// Square or rectangular matrix in CSR form with sorted column indices.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<u32>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        CsrMatrix {
            nrows,
            ncols,
            row_ptr: vec![0; nrows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n as u32).collect(),
            values: vec![1.0; n],
        }
    }

    /// Builds a matrix from rows of (column, value) pairs; each row is sorted
    /// and duplicate columns are summed in input order.
    pub fn from_rows(ncols: usize, rows: Vec<Vec<(u32, f64)>>) -> Self {
        let nrows = rows.len();
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        row_ptr.push(0);
        let nnz: usize = rows.iter().map(Vec::len).sum();
        let mut col_idx = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            let mut last: Option<u32> = None;
            for (c, v) in row {
                if last == Some(c) {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Builds a matrix from (row, col, value) triplets. Duplicates are summed
    /// in the order they appear, so the result is deterministic.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(u32, u32, f64)]) -> Self {
        let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); nrows];
        for &(r, c, v) in triplets {
            rows[r as usize].push((c, v));
        }
        // stable sort inside from_rows keeps insertion order among duplicates
        Self::from_rows(ncols, rows)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> (&[u32], &[f64]) {
        let (s, e) = (self.row_ptr[r], self.row_ptr[r + 1]);
        (&self.col_idx[s..e], &self.values[s..e])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&(c as u32)) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows).map(|r| self.get(r, r)).collect()
    }

    /// `y = A x`. Rows are independent, so the result does not depend on the
    /// thread count.
    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        let row = |r: usize| -> f64 {
            let (cols, vals) = self.row(r);
            cols.iter()
                .zip(vals)
                .map(|(&c, &v)| v * x[c as usize])
                .sum()
        };
        if self.nrows >= PAR_ROWS {
            y.par_iter_mut()
                .enumerate()
                .for_each(|(r, yr)| *yr = row(r));
        } else {
            y.iter_mut().enumerate().for_each(|(r, yr)| *yr = row(r));
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `x · A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let ay = self.mul_vec(y);
        x.iter().zip(&ay).map(|(a, b)| a * b).sum()
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        self.bilinear(x, x)
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.nrows)
            .map(|r| self.row(r).1.iter().sum())
            .collect()
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= alpha);
        out
    }

    /// Diagonal matrix holding the row sums.
    pub fn lumped(&self) -> Self {
        let mut out = CsrMatrix::identity(self.nrows);
        out.values = self.row_sums();
        out
    }

    /// `self + alpha * other` by merging sorted rows.
    pub fn add_scaled(&self, other: &CsrMatrix, alpha: f64) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut row_ptr = Vec::with_capacity(self.nrows + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::with_capacity(self.nnz() + other.nnz());
        let mut values = Vec::with_capacity(self.nnz() + other.nnz());
        for r in 0..self.nrows {
            let (ca, va) = self.row(r);
            let (cb, vb) = other.row(r);
            let (mut i, mut j) = (0, 0);
            while i < ca.len() || j < cb.len() {
                if j == cb.len() || (i < ca.len() && ca[i] < cb[j]) {
                    col_idx.push(ca[i]);
                    values.push(va[i]);
                    i += 1;
                } else if i == ca.len() || cb[j] < ca[i] {
                    col_idx.push(cb[j]);
                    values.push(alpha * vb[j]);
                    j += 1;
                } else {
                    col_idx.push(ca[i]);
                    values.push(va[i] + alpha * vb[j]);
                    i += 1;
                    j += 1;
                }
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Block-diagonal matrix `diag(a, b)`.
    pub fn block_diag(a: &CsrMatrix, b: &CsrMatrix) -> Self {
        let mut row_ptr = a.row_ptr.clone();
        let base = a.nnz();
        row_ptr.extend(b.row_ptr.iter().skip(1).map(|p| p + base));
        let mut col_idx = a.col_idx.clone();
        col_idx.extend(b.col_idx.iter().map(|c| c + a.ncols as u32));
        let mut values = a.values.clone();
        values.extend_from_slice(&b.values);
        CsrMatrix {
            nrows: a.nrows + b.nrows,
            ncols: a.ncols + b.ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Largest `|A_rc - A_cr|` over stored entries.
    pub fn symmetry_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                worst = worst.max((v - self.get(c as usize, r)).abs());
            }
        }
        worst
    }

    /// Writes the matrix in Matrix Market coordinate format (1-based).
    pub fn write_matrix_market(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let mut body = || -> std::io::Result<()> {
            writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
            writeln!(w, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
            for r in 0..self.nrows {
                let (cols, vals) = self.row(r);
                for (&c, &v) in cols.iter().zip(vals) {
                    writeln!(w, "{} {} {:.17e}", r + 1, c + 1, v)?;
                }
            }
            w.flush()
        };
        body().map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CsrMatrix {
        CsrMatrix::from_triplets(
            3,
            3,
            &[
                (0, 0, 2.0),
                (0, 1, -1.0),
                (1, 0, -1.0),
                (1, 1, 2.0),
                (2, 2, 1.0),
                (1, 1, 0.5),
            ],
        )
    }

    #[test]
    fn triplets_sum_duplicates() {
        let a = sample();
        assert_eq!(a.get(1, 1), 2.5);
        assert_eq!(a.nnz(), 5);
        assert_eq!(a.mul_vec(&[1.0, 1.0, 1.0]), vec![1.0, 1.5, 1.0]);
    }

    #[test]
    fn add_and_block_diag() {
        let a = sample();
        let s = a.add_scaled(&CsrMatrix::identity(3), 2.0);
        assert_eq!(s.get(0, 0), 4.0);
        assert_eq!(s.get(0, 2), 0.0);
        let b = CsrMatrix::block_diag(&a, &CsrMatrix::identity(2));
        assert_eq!(b.nrows, 5);
        assert_eq!(b.get(4, 4), 1.0);
        assert_eq!(b.get(1, 0), -1.0);
        assert_eq!(b.symmetry_defect(), 0.0);
    }

    #[test]
    fn matrix_market_export() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.mtx");
        sample().write_matrix_market(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("%%MatrixMarket"));
        assert_eq!(text.lines().count(), 2 + 5);
    }
}
