//! Dirac operator in Pauli form and its unitary equivalence with an
//! extended Maxwell operator on the periodic backend.
//!
//! Complex spinors hold four complex components per point, stored
//! component-major. The real image interleaves real and imaginary parts,
//! `(x1, y1, x2, y2, ...)`, so complex component `j` at point `p` becomes
//! real components `2j` and `2j + 1`.

use nalgebra::{Complex, DMatrix};

use crate::block::{BlockOp, BlockTag};
use crate::discrete::ComplexOps;
use crate::error::{Error, Result};
use crate::grid::{Backend, EntitySpace, GridSpec};
use crate::layout::Layout;
use crate::sparse::SparseOp;

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;

const I: C64 = Complex { re: 0.0, im: 1.0 };

fn c(re: f64, im: f64) -> C64 {
    Complex::new(re, im)
}

fn cmat(n: usize, entries: &[C64]) -> CMatrix {
    CMatrix::from_row_slice(n, n, entries)
}

fn imat(rows: &[[i32; 4]; 4]) -> DMatrix<f64> {
    DMatrix::from_fn(4, 4, |r, c| rows[r][c] as f64)
}

/// The three Pauli matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct PauliSet {
    pub pi: [CMatrix; 3],
}

pub fn pauli_matrices() -> PauliSet {
    let (o, z) = (c(1.0, 0.0), c(0.0, 0.0));
    PauliSet {
        pi: [
            cmat(2, &[z, o, o, z]),
            cmat(2, &[z, -I, I, z]),
            cmat(2, &[o, z, z, -o]),
        ],
    }
}

impl PauliSet {
    /// max over k of |Π_k - Π_k^*|, |Π_k^2 - 1| and the cyclic product rule.
    pub fn algebra_residual(&self) -> f64 {
        let id = CMatrix::identity(2, 2);
        let mut r: f64 = 0.0;
        for k in 0..3 {
            let p = &self.pi[k];
            r = r.max((p - p.adjoint()).map(|z| z.norm()).max());
            r = r.max((p * p - &id).map(|z| z.norm()).max());
            let (a, b) = (&self.pi[(k + 1) % 3], &self.pi[(k + 2) % 3]);
            r = r.max((p * a - b * I).map(|z| z.norm()).max());
        }
        r
    }
}

/// Complex operator `sum_m K_m ⊗ S_m` with constant coefficient matrices
/// `K_m` acting on components and real spatial factors `S_m`
/// (`None` is the identity).
#[derive(Debug, Clone)]
pub struct KronOp {
    pub ncomp: usize,
    pub npoints: usize,
    pub terms: Vec<(CMatrix, Option<SparseOp>)>,
}

impl KronOp {
    pub fn new(ncomp: usize, npoints: usize) -> Self {
        Self {
            ncomp,
            npoints,
            terms: Vec::new(),
        }
    }

    pub fn term(mut self, k: CMatrix, s: Option<&SparseOp>) -> Self {
        assert_eq!(k.nrows(), self.ncomp);
        self.terms.push((k, s.cloned()));
        self
    }

    /// `U self V` for constant component matrices.
    pub fn conjugate(&self, u: &CMatrix, v: &CMatrix) -> Self {
        Self {
            ncomp: self.ncomp,
            npoints: self.npoints,
            terms: self.terms.iter().map(|(k, s)| (u * k * v, s.clone())).collect(),
        }
    }

    pub fn neg(&self) -> Self {
        Self {
            terms: self.terms.iter().map(|(k, s)| (-k, s.clone())).collect(),
            ..self.clone()
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.ncomp, self.npoints), (other.ncomp, other.npoints));
        let mut out = self.clone();
        out.terms.extend(other.terms.iter().cloned());
        out
    }

    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        let np = self.npoints;
        assert_eq!(x.len(), self.ncomp * np);
        let mut y = vec![c(0.0, 0.0); x.len()];
        for (k, s) in &self.terms {
            for b in 0..self.ncomp {
                let xb = &x[b * np..(b + 1) * np];
                let (re, im): (Vec<f64>, Vec<f64>) = xb.iter().map(|z| (z.re, z.im)).unzip();
                let (sre, sim) = match s {
                    None => (re, im),
                    Some(s) => (s.apply(&re).unwrap(), s.apply(&im).unwrap()),
                };
                for a in 0..self.ncomp {
                    let kab = k[(a, b)];
                    if kab == c(0.0, 0.0) {
                        continue;
                    }
                    for p in 0..np {
                        y[a * np + p] += kab * c(sre[p], sim[p]);
                    }
                }
            }
        }
        y
    }

    /// Real matrix of the operator in the interleaved real image.
    pub fn realify(&self) -> SparseOp {
        let np = self.npoints;
        let space = EntitySpace::collocated(np, 2 * self.ncomp);
        let mut t = Vec::new();
        let ident: Vec<(usize, usize, f64)> = (0..np).map(|p| (p, p, 1.0)).collect();
        for (k, s) in &self.terms {
            let trip: Vec<(usize, usize, f64)> = match s {
                None => ident.clone(),
                Some(s) => s.triplets().collect(),
            };
            for a in 0..self.ncomp {
                for b in 0..self.ncomp {
                    let z = k[(a, b)];
                    if z == c(0.0, 0.0) {
                        continue;
                    }
                    let (ra, ia) = (2 * a * np, (2 * a + 1) * np);
                    let (rb, ib) = (2 * b * np, (2 * b + 1) * np);
                    for &(r, cc, v) in &trip {
                        // (x + iy) ↦ [[x, -y], [y, x]]
                        for (row, col, w) in [
                            (ra + r, rb + cc, z.re * v),
                            (ra + r, ib + cc, -z.im * v),
                            (ia + r, rb + cc, z.im * v),
                            (ia + r, ib + cc, z.re * v),
                        ] {
                            if w != 0.0 {
                                t.push((row, col, w));
                            }
                        }
                    }
                }
            }
        }
        SparseOp::from_triplets(space.clone(), space, t)
    }

    pub fn to_dense(&self) -> CMatrix {
        let n = self.ncomp * self.npoints;
        let mut m = CMatrix::zeros(n, n);
        for j in 0..n {
            let mut e = vec![c(0.0, 0.0); n];
            e[j] = c(1.0, 0.0);
            let col = self.apply(&e);
            for i in 0..n {
                m[(i, j)] = col[i];
            }
        }
        m
    }
}

fn partials(grid: &GridSpec) -> Result<[SparseOp; 3]> {
    grid.require(Backend::Periodic, "dirac")?;
    crate::discrete::periodic_partials(grid)
}

/// `C(∂) = sum_k Π_k ∂_k` on two complex components.
pub fn assemble_c_partial(grid: &GridSpec) -> Result<KronOp> {
    let d = partials(grid)?;
    let p = pauli_matrices();
    let mut op = KronOp::new(2, grid.periodic_points());
    for k in 0..3 {
        op = op.term(p.pi[k].clone(), Some(&d[k]));
    }
    Ok(op)
}

fn block2(a: &CMatrix, b: &CMatrix, cc: &CMatrix, d: &CMatrix) -> CMatrix {
    let n = a.nrows();
    let mut m = CMatrix::zeros(2 * n, 2 * n);
    m.view_mut((0, 0), (n, n)).copy_from(a);
    m.view_mut((0, n), (n, n)).copy_from(b);
    m.view_mut((n, 0), (n, n)).copy_from(cc);
    m.view_mut((n, n), (n, n)).copy_from(d);
    m
}

/// Embed a 2x2 spinor operator as a block of a 4-component operator.
fn embed(op: &KronOp, row: usize, col: usize) -> KronOp {
    let z = CMatrix::zeros(2, 2);
    let mut out = KronOp::new(4, op.npoints);
    for (k, s) in &op.terms {
        let blocks = [[&z, &z], [&z, &z]];
        let mut b = blocks;
        b[row][col] = k;
        out.terms.push((block2(b[0][0], b[0][1], b[1][0], b[1][1]), s.clone()));
    }
    out
}

fn scalar2(z: C64) -> CMatrix {
    CMatrix::identity(2, 2) * z
}

/// `W = i (1 + C(∂))`.
pub fn assemble_w(grid: &GridSpec) -> Result<KronOp> {
    let cp = assemble_c_partial(grid)?;
    Ok(KronOp::new(2, grid.periodic_points())
        .term(scalar2(I), None)
        .add(&cp.conjugate(&scalar2(I), &CMatrix::identity(2, 2))))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiracVariant {
    Q0,
    Q1,
}

/// Spatial part `B` of `Q = ∂0 + B`:
/// `B0 = [[i, C], [C, -i]]`, `B1 = [[0, i - iC], [i + iC, 0]]`.
pub fn assemble_q(grid: &GridSpec, variant: DiracVariant) -> Result<KronOp> {
    let np = grid.periodic_points();
    let cp = assemble_c_partial(grid)?;
    let id2 = CMatrix::identity(2, 2);
    let iz = KronOp::new(2, np).term(scalar2(I), None);
    Ok(match variant {
        DiracVariant::Q0 => embed(&iz, 0, 0)
            .add(&embed(&cp, 0, 1))
            .add(&embed(&cp, 1, 0))
            .add(&embed(&iz.neg(), 1, 1)),
        DiracVariant::Q1 => {
            let ic = cp.conjugate(&scalar2(I), &id2);
            embed(&iz.add(&ic.neg()), 0, 1).add(&embed(&iz.add(&ic), 1, 0))
        }
    })
}

/// Complex spinor field together with its real image.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinorField {
    pub npoints: usize,
    pub complex: Vec<C64>,
}

impl SpinorField {
    pub fn new(npoints: usize, complex: Vec<C64>) -> Self {
        assert_eq!(complex.len(), 4 * npoints);
        Self { npoints, complex }
    }

    pub fn real_form(&self) -> Vec<f64> {
        realify_vec(&self.complex, self.npoints)
    }

    pub fn from_real(npoints: usize, real: &[f64]) -> Self {
        Self::new(npoints, complexify_vec(real, npoints))
    }
}

/// Complex vector (component-major) to its interleaved real image.
pub fn realify_vec(z: &[C64], npoints: usize) -> Vec<f64> {
    let ncomp = z.len() / npoints;
    let mut out = vec![0.0; 2 * z.len()];
    for j in 0..ncomp {
        for p in 0..npoints {
            let v = z[j * npoints + p];
            out[2 * j * npoints + p] = v.re;
            out[(2 * j + 1) * npoints + p] = v.im;
        }
    }
    out
}

pub fn complexify_vec(x: &[f64], npoints: usize) -> Vec<C64> {
    let ncomp = x.len() / (2 * npoints);
    let mut out = vec![c(0.0, 0.0); ncomp * npoints];
    for j in 0..ncomp {
        for p in 0..npoints {
            out[j * npoints + p] = c(x[2 * j * npoints + p], x[(2 * j + 1) * npoints + p]);
        }
    }
    out
}

/// Real 2x2 matrix of multiplication by `a + ib`.
pub fn realify_scalar(z: C64) -> [[f64; 2]; 2] {
    [[z.re, -z.im], [z.im, z.re]]
}

/// Constant part of W̃ as printed.
pub const WTILDE_CONST: [[i32; 4]; 4] = [[0, -1, 0, 0], [1, 0, 0, 0], [0, 0, 0, -1], [0, 0, 1, 0]];

/// First-order part of W̃: entry `(sign, k)` stands for `sign * ∂_{k+1}`.
pub const WTILDE_FIRST: [[(i32, usize); 4]; 4] = [
    [(0, 0), (-1, 2), (1, 1), (-1, 0)],
    [(1, 2), (0, 0), (1, 0), (1, 1)],
    [(-1, 1), (-1, 0), (0, 0), (1, 2)],
    [(1, 0), (-1, 1), (-1, 2), (0, 0)],
];

/// Real operator on 4 components from a constant matrix and a pattern of
/// signed partial derivatives.
fn real_pattern(
    np: usize,
    d: &[SparseOp; 3],
    constant: Option<&DMatrix<f64>>,
    first: &[[(i32, usize); 4]; 4],
) -> SparseOp {
    let space = EntitySpace::collocated(np, 4);
    let mut t = Vec::new();
    for a in 0..4 {
        for b in 0..4 {
            if let Some(k) = constant {
                if k[(a, b)] != 0.0 {
                    t.extend((0..np).map(|p| (a * np + p, b * np + p, k[(a, b)])));
                }
            }
            let (s, dir) = first[a][b];
            if s != 0 {
                t.extend(d[dir].triplets().map(|(r, cc, v)| (a * np + r, b * np + cc, s as f64 * v)));
            }
        }
    }
    SparseOp::from_triplets(space.clone(), space, t)
}

/// W̃ assembled directly from its printed entries.
pub fn assemble_wtilde(grid: &GridSpec) -> Result<SparseOp> {
    let d = partials(grid)?;
    Ok(real_pattern(grid.periodic_points(), &d, Some(&imat(&WTILDE_CONST)), &WTILDE_FIRST))
}

/// Factors of the transformation chain.
#[derive(Debug, Clone)]
pub struct UnitaryChain {
    /// `(1/sqrt2) [[i, 1], [i, -1]]`, acting blockwise on spinor halves.
    pub u_q01: CMatrix,
    pub u_q01_inv: CMatrix,
    /// Real image of multiplication by `i`.
    pub realified_i: [[f64; 2]; 2],
    pub p_left: DMatrix<f64>,
    pub p_right: DMatrix<f64>,
    /// Permutation applied to the first real half.
    pub p_a: DMatrix<f64>,
}

pub const P_LEFT: [[i32; 4]; 4] = [[0, 0, -1, 0], [0, 0, 0, -1], [-1, 0, 0, 0], [0, 1, 0, 0]];
pub const P_RIGHT: [[i32; 4]; 4] = [[0, 0, 0, 1], [1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0]];
pub const P_A: [[i32; 4]; 4] = [[0, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1], [1, 0, 0, 0]];

pub fn dirac_to_extmax_unitary() -> UnitaryChain {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let one = c(1.0, 0.0);
    UnitaryChain {
        u_q01: cmat(2, &[I, one, I, -one]) * c(s, 0.0),
        u_q01_inv: cmat(2, &[-I, -I, one, -one]) * c(s, 0.0),
        realified_i: realify_scalar(I),
        p_left: imat(&P_LEFT),
        p_right: imat(&P_RIGHT),
        p_a: imat(&P_A),
    }
}

impl UnitaryChain {
    /// `U ⊗ 1_2` on the four complex components.
    pub fn u_full(&self) -> CMatrix {
        kron2(&self.u_q01)
    }

    pub fn u_full_inv(&self) -> CMatrix {
        kron2(&self.u_q01_inv)
    }

    /// 8x8 real `P = blockdiag(P_a, P_left)`.
    pub fn p_full(&self) -> DMatrix<f64> {
        let mut p = DMatrix::zeros(8, 8);
        p.view_mut((0, 0), (4, 4)).copy_from(&self.p_a);
        p.view_mut((4, 4), (4, 4)).copy_from(&self.p_left);
        p
    }

    /// Largest deviation from unitarity/orthogonality over all factors.
    pub fn orthogonality_residual(&self) -> f64 {
        let u = &self.u_q01;
        let r1 = (u.adjoint() * u - CMatrix::identity(2, 2)).map(|z| z.norm()).max();
        let r2 = (u * &self.u_q01_inv - CMatrix::identity(2, 2)).map(|z| z.norm()).max();
        let ri = DMatrix::from_fn(2, 2, |r, c| self.realified_i[r][c]);
        let r3 = (ri.transpose() * &ri - DMatrix::identity(2, 2)).amax();
        let orth = |m: &DMatrix<f64>| (m.transpose() * m - DMatrix::identity(m.nrows(), m.nrows())).amax();
        [r1, r2, r3, orth(&self.p_left), orth(&self.p_right), orth(&self.p_a), orth(&self.p_full())]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

fn kron2(u: &CMatrix) -> CMatrix {
    let id = CMatrix::identity(2, 2);
    block2(&(&id * u[(0, 0)]), &(&id * u[(0, 1)]), &(&id * u[(1, 0)]), &(&id * u[(1, 1)]))
}

/// `K ⊗ 1_np` for a constant real component matrix.
pub fn kron_constant(k: &DMatrix<f64>, np: usize) -> SparseOp {
    let n = k.nrows();
    let space = EntitySpace::collocated(np, n);
    let mut t = Vec::new();
    for a in 0..n {
        for b in 0..n {
            if k[(a, b)] != 0.0 {
                t.extend((0..np).map(|p| (a * np + p, b * np + p, k[(a, b)])));
            }
        }
    }
    SparseOp::from_triplets(space.clone(), space, t)
}

/// The constant skew matrix 𝓜1 of the equivalence, in the component order
/// `(s0, v1, v2, s3)`.
pub fn m1_matrix() -> DMatrix<f64> {
    let mut m = DMatrix::zeros(8, 8);
    for &(r, c, v) in &[
        (0, 6, -1.0),
        (1, 5, 1.0),
        (2, 4, -1.0),
        (3, 7, -1.0),
        (4, 2, 1.0),
        (5, 1, -1.0),
        (6, 0, 1.0),
        (7, 3, 1.0),
    ] {
        m[(r, c)] = v;
    }
    m
}

/// The spatial part `[[0,0,div,0],[0,0,-curl,grad],[grad,curl,0,0],[0,div,0,0]]`.
pub fn spatial_target(ops: &ComplexOps) -> Result<BlockOp> {
    ops.grid.require(Backend::Periodic, "spatial_target")?;
    let mut a = BlockOp::zero(ops.grid, Layout::extended(ops), BlockTag::Dirac);
    a.set(0, 2, ops.div.clone())?;
    a.set(1, 2, ops.curl.neg())?;
    a.set(1, 3, ops.grad.clone())?;
    a.set(2, 0, ops.grad.clone())?;
    a.set(2, 1, ops.curl.clone())?;
    a.set(3, 1, ops.div.clone())?;
    Ok(a)
}

/// `𝓜1 + spatial_target` as a flattened operator.
pub fn extended_dirac_target(ops: &ComplexOps) -> Result<SparseOp> {
    let np = ops.grid.periodic_points();
    let a = spatial_target(ops)?.to_sparse();
    let m = kron_constant(&m1_matrix(), np).with_spaces(a.rows().clone(), a.cols().clone());
    m.add(&a)
}

/// Real image of `B1`, i.e. `[[0, -W̃^T], [W̃, 0]]`.
pub fn realified_b1(grid: &GridSpec) -> Result<SparseOp> {
    Ok(assemble_q(grid, DiracVariant::Q1)?.realify())
}

/// Residuals of each step of the equivalence proof.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct DiracReport {
    /// `|U B0 U^-1 - B1|` on the real image.
    pub conjugation: f64,
    /// `|W̃ - realify(W)|`.
    pub wtilde: f64,
    /// `|P_L (first-order part) P_R - [[grad, curl], [0, div]]|`.
    pub first_order: f64,
    /// `|P_L (constant part) P_R - printed pattern|`.
    pub constant: f64,
    /// `|P [[0, -W̃^T], [W̃, 0]] P^T - (𝓜1 + spatial)|`.
    pub chain: f64,
    pub orthogonality: f64,
}

pub const CONSTANT_PRODUCT: [[i32; 4]; 4] = [[0, 0, 1, 0], [0, -1, 0, 0], [1, 0, 0, 0], [0, 0, 0, 1]];

pub fn verify_dirac_equivalence(grid: &GridSpec) -> Result<DiracReport> {
    let d = partials(grid)?;
    let np = grid.periodic_points();
    let ops = ComplexOps::build(grid)?;
    let chain = dirac_to_extmax_unitary();

    let b0 = assemble_q(grid, DiracVariant::Q0)?;
    let b1 = assemble_q(grid, DiracVariant::Q1)?;
    let u = KronOp::new(4, np).term(chain.u_full(), None).realify();
    let uinv = KronOp::new(4, np).term(chain.u_full_inv(), None).realify();
    let conjugation = u
        .compose(&b0.realify())?
        .compose(&uinv)?
        .sub(&b1.realify())?
        .max_abs();

    let wt = assemble_wtilde(grid)?;
    let wtilde = wt.sub(&assemble_w(grid)?.realify())?.max_abs();

    let pl = kron_constant(&chain.p_left, np);
    let pr = kron_constant(&chain.p_right, np);
    let first = real_pattern(np, &d, None, &WTILDE_FIRST);
    let got = pl.compose(&first)?.compose(&pr)?;
    let want = grad_curl_div(&ops)?;
    let first_order = got.sub(&want)?.max_abs();

    let kc = &chain.p_left * imat(&WTILDE_CONST) * &chain.p_right;
    let constant = (kc - imat(&CONSTANT_PRODUCT)).amax();

    let p = kron_constant(&chain.p_full(), np);
    let lhs = p.compose(&realified_b1(grid)?)?.compose(&p.adjoint())?;
    let target = extended_dirac_target(&ops)?;
    let chain_res = lhs.with_spaces(target.rows().clone(), target.cols().clone()).sub(&target)?.max_abs();

    Ok(DiracReport {
        conjugation,
        wtilde,
        first_order,
        constant,
        chain: chain_res,
        orthogonality: chain.orthogonality_residual(),
    })
}

/// `[[grad, curl], [0, div]]` mapping `(s, v)` to `(v, s)` on 4 components.
fn grad_curl_div(ops: &ComplexOps) -> Result<SparseOp> {
    let np = ops.grid.periodic_points();
    let space = EntitySpace::collocated(np, 4);
    let mut t = Vec::new();
    t.extend(ops.grad.triplets());
    t.extend(ops.curl.triplets().map(|(r, c, v)| (r, np + c, v)));
    t.extend(ops.div.triplets().map(|(r, c, v)| (3 * np + r, np + c, v)));
    Ok(SparseOp::from_triplets(space.clone(), space, t))
}

/// Sorted singular values of a dense real matrix.
pub fn sorted_singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    s
}

/// Max difference of sorted singular values of realified `B1` and `𝓜1 + spatial`.
pub fn spectral_equivalence_residual(grid: &GridSpec) -> Result<f64> {
    if grid.periodic_points() * 8 > 2048 {
        return Err(Error::TooLarge {
            dim: grid.periodic_points() * 8,
            limit: 2048,
        });
    }
    let ops = ComplexOps::build(grid)?;
    let a = sorted_singular_values(&realified_b1(grid)?.to_dense());
    let b = sorted_singular_values(&extended_dirac_target(&ops)?.to_dense());
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
}
