//! Pointwise (local) matrix fields acting on block vectors.
//!
//! On the periodic backend all components share the collocation points, so a
//! general small dense matrix per point is meaningful. On the staggered
//! backend components live on different entities and only per-dof positive
//! scalars are supported.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::grid::EntityKind;
use crate::layout::Layout;
use crate::sparse::SparseOp;

#[derive(Debug, Clone, PartialEq)]
pub enum PointwiseMatrix {
    /// One `ncomp x ncomp` block per collocation point.
    Dense {
        npoints: usize,
        comps: Vec<usize>,
        blocks: Vec<DMatrix<f64>>,
    },
    /// Scalar multiplier per degree of freedom.
    Diagonal { values: Vec<f64> },
}

impl PointwiseMatrix {
    pub fn identity(layout: &Layout) -> Self {
        Self::Diagonal {
            values: vec![1.0; layout.total()],
        }
    }

    pub fn scalar(layout: &Layout, s: f64) -> Self {
        Self::Diagonal {
            values: vec![s; layout.total()],
        }
    }

    pub fn zeros(layout: &Layout) -> Self {
        Self::scalar(layout, 0.0)
    }

    /// Constant value per slot, repeated over that slot's dofs.
    pub fn per_slot(layout: &Layout, per_slot: &[f64]) -> Self {
        assert_eq!(per_slot.len(), layout.len());
        let mut values = Vec::with_capacity(layout.total());
        for (i, &s) in per_slot.iter().enumerate() {
            values.extend(std::iter::repeat_n(s, layout.slot(i).dofs));
        }
        Self::Diagonal { values }
    }

    /// Dense blocks from a per-point generator; requires a collocated layout.
    pub fn dense_from_fn(
        layout: &Layout,
        mut f: impl FnMut(usize) -> DMatrix<f64>,
    ) -> Result<Self> {
        let (npoints, comps) = collocated_shape(layout)?;
        let n: usize = comps.iter().sum();
        let blocks: Vec<_> = (0..npoints).map(&mut f).collect();
        if blocks.iter().any(|b| b.nrows() != n || b.ncols() != n) {
            return Err(Error::LayoutMismatch {
                op: "dense_from_fn",
                detail: format!("point blocks must be {n}x{n}"),
            });
        }
        Ok(Self::Dense {
            npoints,
            comps,
            blocks,
        })
    }

    pub fn dense_constant(layout: &Layout, m: &DMatrix<f64>) -> Result<Self> {
        Self::dense_from_fn(layout, |_| m.clone())
    }

    /// Promote to per-point dense blocks (periodic layouts only).
    pub fn to_dense_blocks(&self, layout: &Layout) -> Result<Self> {
        match self {
            Self::Dense { .. } => Ok(self.clone()),
            Self::Diagonal { values } => {
                let (npoints, comps) = collocated_shape(layout)?;
                let offs = local_offsets(&comps);
                let n: usize = comps.iter().sum();
                let blocks = (0..npoints)
                    .map(|p| {
                        let mut m = DMatrix::zeros(n, n);
                        for (s, &k) in comps.iter().enumerate() {
                            for c in 0..k {
                                let q = offs[s] + c;
                                m[(q, q)] = values[layout.offset(s) + c * npoints + p];
                            }
                        }
                        m
                    })
                    .collect();
                Ok(Self::Dense {
                    npoints,
                    comps,
                    blocks,
                })
            }
        }
    }

    pub fn is_mixing(&self) -> bool {
        matches!(self, Self::Dense { .. })
    }

    /// Number of local blocks (points, or dofs for diagonal fields).
    pub fn point_count(&self) -> usize {
        match self {
            Self::Dense { npoints, .. } => *npoints,
            Self::Diagonal { values } => values.len(),
        }
    }

    /// Local block at point `p` (1x1 for diagonal fields).
    pub fn block(&self, p: usize) -> DMatrix<f64> {
        match self {
            Self::Dense { blocks, .. } => blocks[p].clone(),
            Self::Diagonal { values } => DMatrix::from_element(1, 1, values[p]),
        }
    }

    pub fn check_layout(&self, layout: &Layout) -> Result<()> {
        match self {
            Self::Diagonal { values } => {
                if values.len() != layout.total() {
                    return Err(Error::LayoutMismatch {
                        op: "pointwise",
                        detail: format!("{} values for {} dofs", values.len(), layout.total()),
                    });
                }
            }
            Self::Dense {
                npoints, comps, ..
            } => {
                let (np, c) = collocated_shape(layout)?;
                if np != *npoints || &c != comps {
                    return Err(Error::LayoutMismatch {
                        op: "pointwise",
                        detail: format!("blocks for {npoints} points/{comps:?} components, layout has {np}/{c:?}"),
                    });
                }
            }
        }
        Ok(())
    }

    /// Restriction to the listed slots. Fails if the field couples a listed
    /// slot with an unlisted one.
    pub fn restrict_slots(&self, layout: &Layout, slots: &[usize]) -> Result<Self> {
        match self {
            Self::Diagonal { values } => Ok(Self::Diagonal {
                values: slots.iter().flat_map(|&s| values[layout.range(s)].iter().copied()).collect(),
            }),
            Self::Dense { npoints, comps, blocks } => {
                let offs = local_offsets(comps);
                let keep: Vec<usize> = slots.iter().flat_map(|&s| offs[s]..offs[s] + comps[s]).collect();
                let n: usize = comps.iter().sum();
                let drop: Vec<usize> = (0..n).filter(|q| !keep.contains(q)).collect();
                let mut out = Vec::with_capacity(*npoints);
                for (p, b) in blocks.iter().enumerate() {
                    for &i in &keep {
                        for &j in &drop {
                            if b[(i, j)] != 0.0 || b[(j, i)] != 0.0 {
                                return Err(Error::InvalidMaterial(format!(
                                    "point {p} couples the kept slots with the dropped ones"
                                )));
                            }
                        }
                    }
                    out.push(DMatrix::from_fn(keep.len(), keep.len(), |r, c| b[(keep[r], keep[c])]));
                }
                Ok(Self::Dense {
                    npoints: *npoints,
                    comps: slots.iter().map(|&s| comps[s]).collect(),
                    blocks: out,
                })
            }
        }
    }

    /// Blockwise map over local matrices.
    pub fn map_blocks(&self, mut f: impl FnMut(&DMatrix<f64>) -> DMatrix<f64>) -> Self {
        match self {
            Self::Dense {
                npoints,
                comps,
                blocks,
            } => Self::Dense {
                npoints: *npoints,
                comps: comps.clone(),
                blocks: blocks.iter().map(&mut f).collect(),
            },
            Self::Diagonal { values } => Self::Diagonal {
                values: values
                    .iter()
                    .map(|&v| f(&DMatrix::from_element(1, 1, v))[(0, 0)])
                    .collect(),
            },
        }
    }

    pub fn transpose(&self) -> Self {
        self.map_blocks(|m| m.transpose())
    }

    pub fn symmetric_part(&self) -> Self {
        self.map_blocks(|m| (m + m.transpose()) * 0.5)
    }

    pub fn scaled(&self, s: f64) -> Self {
        self.map_blocks(|m| m * s)
    }

    /// `a * self + b * other`; the result is dense if either operand is.
    pub fn combine(&self, a: f64, other: &Self, b: f64, layout: &Layout) -> Result<Self> {
        match (self, other) {
            (Self::Diagonal { values: x }, Self::Diagonal { values: y }) => Ok(Self::Diagonal {
                values: x.iter().zip(y).map(|(p, q)| a * p + b * q).collect(),
            }),
            _ => {
                let x = self.to_dense_blocks(layout)?;
                let y = other.to_dense_blocks(layout)?;
                match (x, y) {
                    (
                        Self::Dense {
                            npoints,
                            comps,
                            blocks: bx,
                        },
                        Self::Dense { blocks: by, .. },
                    ) => Ok(Self::Dense {
                        npoints,
                        comps,
                        blocks: bx.iter().zip(&by).map(|(p, q)| p * a + q * b).collect(),
                    }),
                    _ => unreachable!(),
                }
            }
        }
    }

    /// Max |M - M^T| over all points.
    pub fn asymmetry(&self) -> f64 {
        match self {
            Self::Diagonal { .. } => 0.0,
            Self::Dense { blocks, .. } => blocks
                .iter()
                .map(|b| (b - b.transpose()).amax())
                .fold(0.0, f64::max),
        }
    }

    /// Sparse matrix over the flattened layout.
    pub fn to_sparse(&self, layout: &Layout) -> Result<SparseOp> {
        self.check_layout(layout)?;
        let space = layout.stacked_space();
        let t = match self {
            Self::Diagonal { values } => values.iter().enumerate().map(|(i, &v)| (i, i, v)).collect(),
            Self::Dense {
                npoints,
                comps,
                blocks,
            } => {
                let map = local_to_global(layout, comps, *npoints);
                let mut t = Vec::new();
                for (p, b) in blocks.iter().enumerate() {
                    for (qi, gi) in map.iter().enumerate() {
                        for (qj, gj) in map.iter().enumerate() {
                            let v = b[(qi, qj)];
                            if v != 0.0 {
                                t.push((gi(p), gj(p), v));
                            }
                        }
                    }
                }
                t
            }
        };
        Ok(SparseOp::from_triplets(space.clone(), space, t))
    }

    pub fn apply(&self, layout: &Layout, x: &[f64]) -> Result<Vec<f64>> {
        self.to_sparse(layout)?.apply(x)
    }

    /// Largest eigenvalue magnitude of the symmetric part over all points.
    pub fn spectral_radius_sym(&self) -> f64 {
        (0..self.point_count())
            .map(|p| {
                let b = self.block(p);
                let s = (&b + b.transpose()) * 0.5;
                SymmetricEigen::new(s).eigenvalues.amax()
            })
            .fold(0.0, f64::max)
    }
}

fn local_offsets(comps: &[usize]) -> Vec<usize> {
    let mut o = Vec::with_capacity(comps.len());
    let mut acc = 0;
    for &k in comps {
        o.push(acc);
        acc += k;
    }
    o
}

type DofMap = Box<dyn Fn(usize) -> usize>;

fn local_to_global(layout: &Layout, comps: &[usize], npoints: usize) -> Vec<DofMap> {
    let mut map: Vec<DofMap> = Vec::new();
    for (s, &k) in comps.iter().enumerate() {
        let off = layout.offset(s);
        for c in 0..k {
            map.push(Box::new(move |p| off + c * npoints + p));
        }
    }
    map
}

/// (points, components per slot) of a fully collocated layout.
pub(crate) fn collocated_shape(layout: &Layout) -> Result<(usize, Vec<usize>)> {
    let mut np = None;
    let mut comps = Vec::with_capacity(layout.len());
    for s in layout.slots() {
        match s.kind {
            EntityKind::Collocated(k) => {
                let p = s.dofs / k;
                if *np.get_or_insert(p) != p {
                    return Err(Error::LayoutMismatch {
                        op: "pointwise",
                        detail: "slots have different point counts".into(),
                    });
                }
                comps.push(k);
            }
            _ => return Err(Error::MixingWeightOnStaggered),
        }
    }
    Ok((np.unwrap_or(0), comps))
}

/// Symmetric positive definite pointwise weight with cached roots.
#[derive(Debug, Clone)]
pub struct PointwiseWeight {
    matrix: PointwiseMatrix,
    sqrt: PointwiseMatrix,
    inv_sqrt: PointwiseMatrix,
    inverse: PointwiseMatrix,
    min_eig: f64,
}

/// Relative tolerance on |M - M^T| for a point block to count as symmetric.
pub const SYMMETRY_TOL: f64 = 1e-13;

impl PointwiseWeight {
    pub fn new(matrix: PointwiseMatrix) -> Result<Self> {
        let mut min_eig = f64::INFINITY;
        let mut roots = Vec::with_capacity(matrix.point_count());
        for p in 0..matrix.point_count() {
            let b = matrix.block(p);
            let (eig, root, inv_root, inv) = spd_functions(&b, p)?;
            min_eig = min_eig.min(eig);
            roots.push((root, inv_root, inv));
        }
        let pick = |which: usize| match &matrix {
            PointwiseMatrix::Diagonal { .. } => PointwiseMatrix::Diagonal {
                values: roots
                    .iter()
                    .map(|r| match which {
                        0 => r.0[(0, 0)],
                        1 => r.1[(0, 0)],
                        _ => r.2[(0, 0)],
                    })
                    .collect(),
            },
            PointwiseMatrix::Dense { npoints, comps, .. } => PointwiseMatrix::Dense {
                npoints: *npoints,
                comps: comps.clone(),
                blocks: roots
                    .iter()
                    .map(|r| match which {
                        0 => r.0.clone(),
                        1 => r.1.clone(),
                        _ => r.2.clone(),
                    })
                    .collect(),
            },
        };
        let sqrt = pick(0);
        let inv_sqrt = pick(1);
        let inverse = pick(2);
        Ok(Self {
            matrix,
            sqrt,
            inv_sqrt,
            inverse,
            min_eig,
        })
    }

    pub fn identity(layout: &Layout) -> Self {
        Self::new(PointwiseMatrix::identity(layout)).expect("identity is SPD")
    }

    pub fn matrix(&self) -> &PointwiseMatrix {
        &self.matrix
    }

    pub fn sqrt(&self) -> &PointwiseMatrix {
        &self.sqrt
    }

    pub fn inv_sqrt(&self) -> &PointwiseMatrix {
        &self.inv_sqrt
    }

    pub fn inverse(&self) -> &PointwiseMatrix {
        &self.inverse
    }

    pub fn min_eig(&self) -> f64 {
        self.min_eig
    }

    pub fn is_mixing(&self) -> bool {
        self.matrix.is_mixing()
    }
}

/// Principal square root of an SPD weight, as a weight in its own right.
pub fn sqrtm_pointwise(weight: &PointwiseWeight) -> Result<PointwiseWeight> {
    PointwiseWeight::new(weight.sqrt().clone())
}

/// (min eigenvalue, sqrt, inverse sqrt, inverse) of one SPD block.
fn spd_functions(
    b: &DMatrix<f64>,
    point: usize,
) -> Result<(f64, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let scale = b.amax().max(f64::MIN_POSITIVE);
    let asym = (b - b.transpose()).amax();
    if asym > SYMMETRY_TOL * scale || !b.iter().all(|v| v.is_finite()) {
        return Err(Error::NotSymmetric {
            point,
            asymmetry: asym,
        });
    }
    let n = b.nrows();
    let is_diag = (0..n).all(|i| (0..n).all(|j| i == j || b[(i, j)] == 0.0));
    if is_diag {
        let d: Vec<f64> = (0..n).map(|i| b[(i, i)]).collect();
        let min = d.iter().copied().fold(f64::INFINITY, f64::min);
        if min <= 0.0 {
            return Err(Error::NotPositiveDefinite {
                point,
                min_eig: min,
            });
        }
        let diag = |f: &dyn Fn(f64) -> f64| {
            DMatrix::from_fn(n, n, |i, j| if i == j { f(d[i]) } else { 0.0 })
        };
        return Ok((
            min,
            diag(&|x| x.sqrt()),
            diag(&|x| 1.0 / x.sqrt()),
            diag(&|x| 1.0 / x),
        ));
    }
    let sym = (b + b.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let min = eig.eigenvalues.min();
    if min <= 0.0 {
        return Err(Error::NotPositiveDefinite {
            point,
            min_eig: min,
        });
    }
    let q = &eig.eigenvectors;
    let f = |g: &dyn Fn(f64) -> f64| {
        let d = DMatrix::from_diagonal(&eig.eigenvalues.map(g));
        let m = q * d * q.transpose();
        // Symmetrize to remove rounding asymmetry.
        (&m + m.transpose()) * 0.5
    };
    Ok((
        min,
        f(&|x| x.sqrt()),
        f(&|x| 1.0 / x.sqrt()),
        f(&|x| 1.0 / x),
    ))
}

/// Minimum eigenvalue of the symmetric part of each point block.
pub fn min_sym_eigs(m: &PointwiseMatrix) -> Vec<f64> {
    (0..m.point_count())
        .map(|p| {
            let b = m.block(p);
            if b.nrows() == 1 {
                b[(0, 0)]
            } else {
                SymmetricEigen::new((&b + b.transpose()) * 0.5).eigenvalues.min()
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::EntitySpace;

    fn colloc(np: usize, comps: &[usize]) -> Layout {
        Layout::new(
            comps.iter().map(|&k| EntitySpace::collocated(np, k)).collect(),
            comps.iter().enumerate().map(|(i, _)| format!("s{i}")).collect(),
        )
    }

    #[test]
    fn identity_root_is_identity() {
        let l = colloc(3, &[1, 1]);
        let w = PointwiseWeight::identity(&l);
        assert_eq!(w.sqrt(), &PointwiseMatrix::identity(&l));
        assert_eq!(w.inv_sqrt(), &PointwiseMatrix::identity(&l));
    }

    #[test]
    fn diagonal_block_root() {
        let l = colloc(1, &[1, 1]);
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 9.0]);
        let w = PointwiseWeight::new(PointwiseMatrix::dense_constant(&l, &m).unwrap()).unwrap();
        assert_eq!(
            w.sqrt().block(0),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0])
        );
    }

    #[test]
    fn coupled_block_root_squares_back() {
        let l = colloc(1, &[2]);
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let w = PointwiseWeight::new(PointwiseMatrix::dense_constant(&l, &m).unwrap()).unwrap();
        let r = w.sqrt().block(0);
        // Oracle: eigenvalues 3 and 1 with eigenvectors (1,1)/sqrt2, (1,-1)/sqrt2.
        let (a, b) = (3f64.sqrt(), 1.0);
        let expected = DMatrix::from_row_slice(2, 2, &[(a + b) / 2.0, (a - b) / 2.0, (a - b) / 2.0, (a + b) / 2.0]);
        assert!((&r - &expected).amax() < 1e-15);
        assert!((&r * &r - &m).amax() <= 1e-14 * m.amax());
        assert!((w.inv_sqrt().block(0) * &r - DMatrix::identity(2, 2)).amax() < 1e-14);
    }

    #[test]
    fn indefinite_reports_point() {
        let l = colloc(2, &[2]);
        let err = PointwiseWeight::new(
            PointwiseMatrix::dense_from_fn(&l, |p| {
                if p == 1 {
                    DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])
                } else {
                    DMatrix::identity(2, 2)
                }
            })
            .unwrap(),
        )
        .unwrap_err();
        match err {
            Error::NotPositiveDefinite { point, min_eig } => {
                assert_eq!(point, 1);
                assert!((min_eig + 1.0).abs() < 1e-12);
            }
            e => panic!("{e:?}"),
        }
        let err = PointwiseWeight::new(
            PointwiseMatrix::dense_constant(&l, &DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0])).unwrap(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NotSymmetric { point: 0, .. }));
    }

    #[test]
    fn dense_to_sparse_places_entries() {
        let l = colloc(2, &[1, 2]);
        let m = DMatrix::from_fn(3, 3, |i, j| (10 * i + j) as f64);
        let s = PointwiseMatrix::dense_constant(&l, &m).unwrap().to_sparse(&l).unwrap();
        // slot 1 component 1 at point 1 is global dof 2 + 1*2 + 1 = 5; local index 2
        assert_eq!(s.get(5, 1), m[(2, 0)]);
        assert_eq!(s.get(1, 5), m[(0, 2)]);
        assert_eq!(s.get(5, 0), 0.0);
    }
}
