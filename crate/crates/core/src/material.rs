//! Affine material laws `M0 + ∂0^{-1} M1` and their positivity certificates.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::discrete::dof_positions;
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::layout::Layout;
use crate::pointwise::{collocated_shape, PointwiseMatrix, PointwiseWeight};

/// Pointwise pair `(M0, M1)` over a slot layout.
#[derive(Debug, Clone)]
pub struct MaterialLaw {
    pub layout: Layout,
    pub m0: PointwiseMatrix,
    pub m1: PointwiseMatrix,
}

/// Outcome of certifying (H1)/(H2) at a given weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositivityReport {
    pub nu: f64,
    pub c0: f64,
    pub min_eig_estimate: f64,
    /// Point (or dof) where the minimum is attained.
    pub argmin: usize,
    pub method: String,
}

impl MaterialLaw {
    pub fn new(layout: Layout, m0: PointwiseMatrix, m1: PointwiseMatrix) -> Result<Self> {
        m0.check_layout(&layout)?;
        m1.check_layout(&layout)?;
        Ok(Self { layout, m0, m1 })
    }

    /// `M0 = 1`, `M1 = 0`.
    pub fn identity(layout: &Layout) -> Self {
        Self {
            layout: layout.clone(),
            m0: PointwiseMatrix::identity(layout),
            m1: PointwiseMatrix::zeros(layout),
        }
    }

    /// `M0 = E`, `M1 = 0` for an SPD weight.
    pub fn from_weight(layout: &Layout, weight: &PointwiseWeight) -> Result<Self> {
        Self::new(layout.clone(), weight.matrix().clone(), PointwiseMatrix::zeros(layout))
    }

    pub fn m1_is_zero(&self) -> bool {
        match &self.m1 {
            PointwiseMatrix::Diagonal { values } => values.iter().all(|&v| v == 0.0),
            PointwiseMatrix::Dense { blocks, .. } => blocks.iter().all(|b| b.iter().all(|&v| v == 0.0)),
        }
    }

    /// The pointwise coercivity matrix `nu M0 + sym(M1)`.
    pub fn coercivity_matrix(&self, nu: f64) -> Result<PointwiseMatrix> {
        self.m0.combine(nu, &self.m1.symmetric_part(), 1.0, &self.layout)
    }
}

/// Certify (H1) exactly and (H2) by a per-point symmetric eigensolve.
pub fn verify_h1_h2(law: &MaterialLaw, nu: f64) -> Result<PositivityReport> {
    let asym = law.m0.asymmetry();
    if asym != 0.0 {
        return Err(Error::SelfAdjointnessViolated { asymmetry: asym });
    }
    if !(nu.is_finite() && nu > 0.0) {
        return Err(Error::InvalidTimeGrid(format!("weight nu must be positive, got {nu}")));
    }
    let q = law.coercivity_matrix(nu)?;
    let mut c0 = f64::INFINITY;
    let mut argmin = 0;
    for p in 0..q.point_count() {
        let b = q.block(p);
        let e = if b.nrows() == 1 {
            b[(0, 0)]
        } else {
            SymmetricEigen::new(b).eigenvalues.min()
        };
        if e < c0 {
            c0 = e;
            argmin = p;
        }
    }
    if c0 <= 0.0 {
        return Err(Error::CoercivityViolated {
            point: argmin,
            eigenvalue: c0,
        });
    }
    Ok(PositivityReport {
        nu,
        c0,
        min_eig_estimate: c0,
        argmin,
        method: if q.is_mixing() {
            "per-point dense symmetric eigensolve".into()
        } else {
            "per-dof diagonal minimum".into()
        },
    })
}

/// Spatial coefficient profile sampled at dof positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    Constant { value: f64 },
    /// `inside` for `x < split * L_x`, `outside` elsewhere.
    TwoRegion { inside: f64, outside: f64, split: f64 },
}

impl Profile {
    pub fn constant(value: f64) -> Self {
        Self::Constant { value }
    }

    pub fn sample(&self, grid: &GridSpec, space: &crate::grid::EntitySpace) -> Vec<f64> {
        match *self {
            Profile::Constant { value } => vec![value; space.dofs],
            Profile::TwoRegion {
                inside,
                outside,
                split,
            } => {
                let cut = split * grid.lengths()[0];
                dof_positions(grid, space)
                    .into_iter()
                    .map(|x| if x[0] < cut { inside } else { outside })
                    .collect()
            }
        }
    }

    pub fn min(&self) -> f64 {
        match *self {
            Profile::Constant { value } => value,
            Profile::TwoRegion { inside, outside, .. } => inside.min(outside),
        }
    }
}

/// Diagonal Maxwell law `M0 = diag(eps, mu)`, `M1 = diag(sigma, 0)` on the
/// `(E, H)` layout. `eps` and `sigma` may vanish pointwise.
pub fn maxwell_diagonal_law(layout: &Layout, eps: &[f64], mu: &[f64], sigma: &[f64]) -> Result<MaterialLaw> {
    if layout.len() != 2 || eps.len() != layout.slot(0).dofs || sigma.len() != layout.slot(0).dofs || mu.len() != layout.slot(1).dofs {
        return Err(Error::LayoutMismatch {
            op: "maxwell_diagonal_law",
            detail: "coefficients must match the (E, H) slot sizes".into(),
        });
    }
    let bad = |v: &[f64], strict: bool| v.iter().any(|&x| !x.is_finite() || x < 0.0 || (strict && x == 0.0));
    if bad(mu, true) {
        return Err(Error::InvalidMaterial("mu must be positive".into()));
    }
    if bad(eps, false) || bad(sigma, false) {
        return Err(Error::InvalidMaterial("eps and sigma must be nonnegative".into()));
    }
    let m0 = PointwiseMatrix::Diagonal {
        values: eps.iter().chain(mu).copied().collect(),
    };
    let m1 = PointwiseMatrix::Diagonal {
        values: sigma.iter().copied().chain(std::iter::repeat_n(0.0, mu.len())).collect(),
    };
    MaterialLaw::new(layout.clone(), m0, m1)
}

/// Eddy-current law `M0 = diag(0, mu)`, `M1 = diag(sigma, 0)`.
pub fn eddy_current_preset(layout: &Layout, sigma: &[f64], mu: &[f64]) -> Result<MaterialLaw> {
    if sigma.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
        return Err(Error::InvalidMaterial("sigma must be positive".into()));
    }
    let eps = vec![0.0; sigma.len()];
    maxwell_diagonal_law(layout, &eps, mu, sigma)
}

/// Weight on the extended layout of the form
/// `diag(e00, [[E11, E12], [E21, E22]], e33)` with a constant 6x6 middle block.
pub fn block_structured_weight(layout: &Layout, e00: f64, middle: &DMatrix<f64>, e33: f64) -> Result<PointwiseWeight> {
    if middle.nrows() != 6 || middle.ncols() != 6 {
        return Err(Error::LayoutMismatch {
            op: "block_structured_weight",
            detail: "middle block must be 6x6".into(),
        });
    }
    let mut m = DMatrix::zeros(8, 8);
    m[(0, 0)] = e00;
    m.view_mut((1, 1), (6, 6)).copy_from(middle);
    m[(7, 7)] = e33;
    PointwiseWeight::new(PointwiseMatrix::dense_constant(layout, &m)?)
}

/// Assemble the 8-component weight `[[C, (0,0,S)], [(0,0,S^T), K]]` from a
/// block-structured 7-component `C`, a scalar `K` and a 3-vector `S` per point.
///
/// Requires the periodic collocated layout. The Schur complement
/// `K - S^T C^{-1} S` is checked pointwise.
pub fn build_gem_material(
    ext_layout: &Layout,
    c: &PointwiseMatrix,
    k: &[f64],
    s: &[[f64; 3]],
) -> Result<PointwiseWeight> {
    let (np, comps) = collocated_shape(ext_layout)?;
    if comps != [1, 3, 3, 1] {
        return Err(Error::LayoutMismatch {
            op: "build_gem_material",
            detail: format!("expected extended layout, got components {comps:?}"),
        });
    }
    let gem_layout = ext_layout.select(&[0, 1, 2]);
    let c = c.to_dense_blocks(&gem_layout)?;
    if k.len() != np || s.len() != np {
        return Err(Error::LayoutMismatch {
            op: "build_gem_material",
            detail: format!("K and S need {np} points"),
        });
    }
    let mut blocks = Vec::with_capacity(np);
    for p in 0..np {
        let cb = c.block(p);
        for i in 0..4 {
            for j in 4..7 {
                if cb[(i, j)] != 0.0 || cb[(j, i)] != 0.0 {
                    return Err(Error::InvalidMaterial(format!(
                        "C at point {p} couples the H block with (C, E)"
                    )));
                }
            }
        }
        let c22 = cb.view((4, 4), (3, 3)).into_owned();
        let sv = nalgebra::Vector3::from(s[p]);
        let chol = nalgebra::Cholesky::new(c22.clone()).ok_or(Error::NotPositiveDefinite {
            point: p,
            min_eig: SymmetricEigen::new(c22.clone()).eigenvalues.min(),
        })?;
        let y = chol.solve(&DMatrix::from_column_slice(3, 1, sv.as_slice()));
        let schur = k[p] - (sv.transpose() * y)[(0, 0)];
        // negated so NaN fails
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(schur > 0.0) {
            return Err(Error::SchurViolated { point: p, value: schur });
        }
        let mut m = DMatrix::zeros(8, 8);
        m.view_mut((0, 0), (7, 7)).copy_from(&cb);
        for r in 0..3 {
            m[(4 + r, 7)] = s[p][r];
            m[(7, 4 + r)] = s[p][r];
        }
        m[(7, 7)] = k[p];
        blocks.push(m);
    }
    PointwiseWeight::new(PointwiseMatrix::Dense {
        npoints: np,
        comps,
        blocks,
    })
}
