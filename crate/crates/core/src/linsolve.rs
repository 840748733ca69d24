//! Cached sparse LU factorization with residual control.

use faer::sparse::linalg::solvers::Lu;
use faer::sparse::{SparseColMat, Triplet};
use faer::prelude::*;
use faer::Mat;

use crate::error::{Error, Result};
use crate::sparse::SparseOp;

/// Relative residual every linear solve must reach.
pub const SOLVE_TOL: f64 = 1e-10;

pub struct Factorization {
    op: SparseOp,
    lu: Lu<usize, f64>,
}

impl std::fmt::Debug for Factorization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Factorization").field("n", &self.op.nrows()).finish()
    }
}

impl Factorization {
    pub fn new(op: &SparseOp) -> Result<Self> {
        if op.nrows() != op.ncols() {
            return Err(Error::DimensionMismatch {
                op: "factorize",
                left: op.rows().to_string(),
                right: op.cols().to_string(),
            });
        }
        let n = op.nrows();
        let t: Vec<_> = op.triplets().map(|(r, c, v)| Triplet::new(r, c, v)).collect();
        let m = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &t)
            .map_err(|e| Error::SingularStep(format!("{e:?}")))?;
        let lu = m.sp_lu().map_err(|e| Error::SingularStep(format!("{e:?}")))?;
        Ok(Self { op: op.clone(), lu })
    }

    pub fn dim(&self) -> usize {
        self.op.nrows()
    }

    fn raw_solve(&self, b: &[f64]) -> Vec<f64> {
        let rhs = Mat::<f64>::from_fn(b.len(), 1, |i, _| b[i]);
        let x = self.lu.solve(&rhs);
        (0..b.len()).map(|i| x[(i, 0)]).collect()
    }

    /// Solve `A x = b` with one step of iterative refinement; returns the
    /// solution and its relative residual.
    pub fn solve(&self, b: &[f64]) -> Result<(Vec<f64>, f64)> {
        if b.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                op: "solve",
                left: self.op.rows().to_string(),
                right: format!("vector[{}]", b.len()),
            });
        }
        let bn = l2(b);
        if bn == 0.0 {
            return Ok((vec![0.0; b.len()], 0.0));
        }
        let mut x = self.raw_solve(b);
        let mut r = self.residual(&x, b);
        if l2(&r) > 1e-15 * bn {
            let dx = self.raw_solve(&r);
            for (xi, d) in x.iter_mut().zip(&dx) {
                *xi += d;
            }
            r = self.residual(&x, b);
        }
        let rel = l2(&r) / bn;
        if !rel.is_finite() {
            return Err(Error::SingularStep("non-finite solution".into()));
        }
        Ok((x, rel))
    }

    fn residual(&self, x: &[f64], b: &[f64]) -> Vec<f64> {
        let mut ax = vec![0.0; b.len()];
        self.op.apply_into(x, &mut ax);
        b.iter().zip(&ax).map(|(bi, a)| bi - a).collect()
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::EntitySpace;

    #[test]
    fn solves_small_system() {
        let s = EntitySpace::collocated(3, 1);
        let a = SparseOp::from_triplets(
            s.clone(),
            s,
            vec![(0, 0, 4.0), (0, 1, 1.0), (1, 0, -1.0), (1, 1, 3.0), (2, 2, 2.0), (2, 0, 1.0)],
        );
        let f = Factorization::new(&a).unwrap();
        let (x, r) = f.solve(&[1.0, 2.0, 3.0]).unwrap();
        assert!(r < 1e-15);
        let ax = a.apply(&x).unwrap();
        assert!((ax[0] - 1.0).abs() < 1e-14 && (ax[1] - 2.0).abs() < 1e-14 && (ax[2] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn singular_is_reported() {
        let s = EntitySpace::collocated(2, 1);
        let a = SparseOp::from_triplets(s.clone(), s, vec![(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)]);
        let res = Factorization::new(&a).and_then(|f| f.solve(&[1.0, 0.0]));
        match res {
            Err(_) => {}
            Ok((_, r)) => assert!(r > SOLVE_TOL),
        }
    }
}
