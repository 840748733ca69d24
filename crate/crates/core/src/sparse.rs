//! Compressed-row sparse operators between entity spaces.
//!
//! Entries are kept sorted by (row, column) and explicit zeros are dropped,
//! so two operators with the same mathematical content have bit-identical
//! storage. Because every space carries the same `h^3` inner-product weight,
//! the matrix transpose is the Hilbert adjoint.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::EntitySpace;

pub type FieldVec = Vec<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseOp {
    rows: EntitySpace,
    cols: EntitySpace,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseOp {
    /// Assembles from unsorted triplets; duplicates are summed and exact zeros
    /// removed afterwards.
    pub fn from_triplets(
        rows: EntitySpace,
        cols: EntitySpace,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Self {
        let (m, n) = (rows.dofs, cols.dofs);
        debug_assert!(triplets.iter().all(|&(r, c, _)| r < m && c < n));
        triplets.sort_by_key(|&(r, c, _)| (r, c));

        let mut row_ptr = vec![0usize; m + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        let mut it = triplets.into_iter().peekable();
        while let Some((r, c, mut v)) = it.next() {
            while let Some(&(r2, c2, v2)) = it.peek() {
                if (r2, c2) != (r, c) {
                    break;
                }
                v += v2;
                it.next();
            }
            if v != 0.0 {
                debug_assert!(v.is_finite());
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
            }
        }
        for i in 0..m {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn zero(rows: EntitySpace, cols: EntitySpace) -> Self {
        Self::from_triplets(rows, cols, Vec::new())
    }

    pub fn identity(space: EntitySpace) -> Self {
        let n = space.dofs;
        Self::from_triplets(space.clone(), space, (0..n).map(|i| (i, i, 1.0)).collect())
    }

    pub fn diagonal(space: EntitySpace, diag: &[f64]) -> Self {
        assert_eq!(diag.len(), space.dofs);
        let t = diag.iter().enumerate().map(|(i, &v)| (i, i, v)).collect();
        Self::from_triplets(space.clone(), space, t)
    }

    pub fn rows(&self) -> &EntitySpace {
        &self.rows
    }

    pub fn cols(&self) -> &EntitySpace {
        &self.cols
    }

    pub fn nrows(&self) -> usize {
        self.rows.dofs
    }

    pub fn ncols(&self) -> usize {
        self.cols.dofs
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn is_zero(&self) -> bool {
        self.values.is_empty()
    }

    /// Iterates stored entries in row-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows()).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |p| (r, self.col_idx[p], self.values[p]))
        })
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |p| (self.col_idx[p], self.values[p]))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let slice = &self.col_idx[self.row_ptr[r]..self.row_ptr[r + 1]];
        match slice.binary_search(&c) {
            Ok(p) => self.values[self.row_ptr[r] + p],
            Err(_) => 0.0,
        }
    }

    /// Same matrix, relabelled spaces. Dimensions must agree.
    pub fn with_spaces(mut self, rows: EntitySpace, cols: EntitySpace) -> Self {
        assert_eq!(rows.dofs, self.rows.dofs);
        assert_eq!(cols.dofs, self.cols.dofs);
        self.rows = rows;
        self.cols = cols;
        self
    }

    /// Hilbert adjoint, which is the transpose under the uniform inner product.
    pub fn adjoint(&self) -> Self {
        let t = self.triplets().map(|(r, c, v)| (c, r, v)).collect();
        Self::from_triplets(self.cols.clone(), self.rows.clone(), t)
    }

    pub fn transpose(&self) -> Self {
        self.adjoint()
    }

    /// Sparse product `self * rhs`.
    pub fn compose(&self, rhs: &SparseOp) -> Result<SparseOp> {
        if self.cols.dofs != rhs.rows.dofs {
            return Err(Error::DimensionMismatch {
                op: "compose",
                left: self.cols.to_string(),
                right: rhs.rows.to_string(),
            });
        }
        let n = rhs.ncols();
        let mut acc = vec![0.0; n];
        let mut touched = vec![false; n];
        let mut pattern: Vec<usize> = Vec::new();
        let mut t = Vec::new();
        for r in 0..self.nrows() {
            for (k, a) in self.row(r) {
                for (c, b) in rhs.row(k) {
                    if !touched[c] {
                        touched[c] = true;
                        pattern.push(c);
                    }
                    acc[c] += a * b;
                }
            }
            pattern.sort_unstable();
            for &c in &pattern {
                t.push((r, c, acc[c]));
                acc[c] = 0.0;
                touched[c] = false;
            }
            pattern.clear();
        }
        Ok(SparseOp::from_triplets(self.rows.clone(), rhs.cols.clone(), t))
    }

    pub fn add(&self, rhs: &SparseOp) -> Result<SparseOp> {
        self.axpby(1.0, rhs, 1.0)
    }

    pub fn sub(&self, rhs: &SparseOp) -> Result<SparseOp> {
        self.axpby(1.0, rhs, -1.0)
    }

    /// `a * self + b * rhs`.
    pub fn axpby(&self, a: f64, rhs: &SparseOp, b: f64) -> Result<SparseOp> {
        if self.rows.dofs != rhs.rows.dofs || self.cols.dofs != rhs.cols.dofs {
            return Err(Error::DimensionMismatch {
                op: "add",
                left: format!("{} -> {}", self.cols, self.rows),
                right: format!("{} -> {}", rhs.cols, rhs.rows),
            });
        }
        let t = self
            .triplets()
            .map(|(r, c, v)| (r, c, a * v))
            .chain(rhs.triplets().map(|(r, c, v)| (r, c, b * v)))
            .collect();
        Ok(SparseOp::from_triplets(self.rows.clone(), self.cols.clone(), t))
    }

    pub fn scale(&self, s: f64) -> SparseOp {
        let t = self.triplets().map(|(r, c, v)| (r, c, s * v)).collect();
        SparseOp::from_triplets(self.rows.clone(), self.cols.clone(), t)
    }

    pub fn neg(&self) -> SparseOp {
        self.scale(-1.0)
    }

    pub fn apply(&self, x: &[f64]) -> Result<FieldVec> {
        if x.len() != self.ncols() {
            return Err(Error::DimensionMismatch {
                op: "apply",
                left: self.cols.to_string(),
                right: format!("vector[{}]", x.len()),
            });
        }
        let mut y = vec![0.0; self.nrows()];
        self.apply_into(x, &mut y);
        Ok(y)
    }

    /// `y = A x` without dimension checks beyond debug assertions.
    pub fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols());
        debug_assert_eq!(y.len(), self.nrows());
        for (r, yr) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for p in self.row_ptr[r]..self.row_ptr[r + 1] {
                s += self.values[p] * x[self.col_idx[p]];
            }
            *yr = s;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// max |A + A^T|; exactly zero for skew operators.
    pub fn skew_defect(&self) -> f64 {
        self.add(&self.adjoint()).map(|s| s.max_abs()).unwrap_or(f64::INFINITY)
    }

    /// max |A - A^T|.
    pub fn symmetry_defect(&self) -> f64 {
        self.sub(&self.adjoint()).map(|s| s.max_abs()).unwrap_or(f64::INFINITY)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows(), self.ncols());
        for (r, c, v) in self.triplets() {
            m[(r, c)] = v;
        }
        m
    }

    pub fn from_dense(rows: EntitySpace, cols: EntitySpace, m: &DMatrix<f64>) -> Self {
        let mut t = Vec::new();
        for c in 0..m.ncols() {
            for r in 0..m.nrows() {
                let v = m[(r, c)];
                if v != 0.0 {
                    t.push((r, c, v));
                }
            }
        }
        Self::from_triplets(rows, cols, t)
    }

    /// Coordinate-format dump: one `row col value` line per entry, values
    /// with 17 significant digits.
    pub fn to_coordinate_text(&self) -> String {
        let mut s = String::with_capacity(self.nnz() * 32);
        let _ = writeln!(s, "% {} x {} nnz={}", self.nrows(), self.ncols(), self.nnz());
        for (r, c, v) in self.triplets() {
            let _ = writeln!(s, "{r} {c} {v:.16e}");
        }
        s
    }
}

/// Discrete inner product `h^3 * x . y`.
pub fn inner(x: &[f64], y: &[f64], cell_volume: f64) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    cell_volume * x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>()
}

pub fn norm(x: &[f64], cell_volume: f64) -> f64 {
    inner(x, x, cell_volume).sqrt()
}

pub fn max_abs(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn max_abs_diff(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::EntityKind;
    use crate::grid::Support;

    fn sp(n: usize) -> EntitySpace {
        EntitySpace::new(EntityKind::Collocated(1), Support::Full, n)
    }

    #[test]
    fn duplicates_summed_and_zeros_dropped() {
        let a = SparseOp::from_triplets(
            sp(2),
            sp(2),
            vec![(1, 0, 2.0), (0, 1, 1.0), (0, 1, -1.0), (1, 0, 0.5)],
        );
        assert_eq!(a.nnz(), 1);
        assert_eq!(a.get(1, 0), 2.5);
        assert_eq!(a.get(0, 1), 0.0);
    }

    #[test]
    fn identity_apply() {
        let id = SparseOp::identity(sp(4));
        let x = vec![1.0, -2.0, 3.5, 0.25];
        assert_eq!(id.apply(&x).unwrap(), x);
    }

    #[test]
    fn compose_mismatch_names_spaces() {
        let a = SparseOp::zero(sp(2), sp(3));
        let b = SparseOp::zero(sp(2), sp(2));
        let err = a.compose(&b).unwrap_err();
        match err {
            Error::DimensionMismatch { left, right, .. } => {
                assert!(left.contains("[3]"));
                assert!(right.contains("[2]"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(a.apply(&[1.0]).is_err());
    }

    #[test]
    fn coordinate_dump_has_17_digits() {
        let a = SparseOp::from_triplets(sp(1), sp(1), vec![(0, 0, 1.0 / 3.0)]);
        let text = a.to_coordinate_text();
        let line = text.lines().nth(1).unwrap();
        assert_eq!(line, "0 0 3.3333333333333331e-1");
    }
}
