//! Coupled Maxwell-Dirac system with quadratic couplings.
//!
//! Three extended-layout blocks evolve together on a periodic grid:
//! the field block `U0 = (0, E, H, 0)` with `(∂0 + A) U0 = (ρ, -J, 0, 0)`,
//! the spinor `ψ` with `(∂0 + M1 + A) ψ = g` and the potential `α` with
//! `(∂0 - A) α = U0`. Couplings are `J_k = <ψ, A_k ψ>`,
//! `g = α0 S ψ + sum_k α_k S A_k ψ` and `ρ = |ψ|^2 - ρ_bg`.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::block::{assemble_block, BlockOp, BlockTag};
use crate::dirac::{kron_constant, m1_matrix as hamiltonian_m1};
use crate::discrete::ComplexOps;
use crate::error::{Error, Result};
use crate::evo::{discrete_d0, TimeGrid};
use crate::grid::{Backend, GridSpec};
use crate::layout::Layout;
use crate::linsolve::{Factorization, SOLVE_TOL};
use crate::sparse::{self, SparseOp};

/// Spinor coupling matrix `M1` in the non-Hamiltonian form, as printed.
pub const M1: [[i32; 8]; 8] = [
    [0, 0, 0, 1, 0, 0, 0, 0],
    [0, 0, 0, 0, 0, 1, 0, 0],
    [0, 0, 0, 0, -1, 0, 0, 0],
    [-1, 0, 0, 0, 0, 0, 0, 0],
    [0, 0, 1, 0, 0, 0, 0, 0],
    [0, -1, 0, 0, 0, 0, 0, 0],
    [0, 0, 0, 0, 0, 0, 0, 1],
    [0, 0, 0, 0, 0, 0, -1, 0],
];

pub fn m1_matrix() -> DMatrix<f64> {
    DMatrix::from_fn(8, 8, |r, c| M1[r][c] as f64)
}

/// Swap of the two scalar components, `0 <-> 7`.
pub fn scalar_swap() -> DMatrix<f64> {
    let mut p = DMatrix::identity(8, 8);
    p.swap_rows(0, 7);
    p
}

/// `|M1 - Π 𝓜1 Π|` for the Hamiltonian-form matrix `𝓜1`.
pub fn m1_form_residual() -> f64 {
    let p = scalar_swap();
    (m1_matrix() - &p * hamiltonian_m1() * &p).amax()
}

/// Coefficient matrices with `A = sum_k A_k ∂_k` for the operator
/// `A_Max + A_Dac + A_Nac`, components ordered `(s0, v1, v2, s3)`.
pub fn coefficient_matrices() -> [DMatrix<f64>; 3] {
    let eps = |i: usize, j: usize, k: usize| -> f64 {
        match (i, j, k) {
            (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1.0,
            (0, 2, 1) | (2, 1, 0) | (1, 0, 2) => -1.0,
            _ => 0.0,
        }
    };
    std::array::from_fn(|j| {
        let mut a = DMatrix::zeros(8, 8);
        // div (0, v1) and grad_int (v1, 0)
        a[(0, 1 + j)] = 1.0;
        a[(1 + j, 0)] = 1.0;
        // grad (v2, 3) and div_int (3, v2)
        a[(4 + j, 7)] = 1.0;
        a[(7, 4 + j)] = 1.0;
        // (curl u)_i = eps_ijk ∂_j u_k; -curl in (v1, v2), curl_int in (v2, v1)
        for i in 0..3 {
            for k in 0..3 {
                a[(1 + i, 4 + k)] -= eps(i, j, k);
                a[(4 + i, 1 + k)] += eps(i, j, k);
            }
        }
        a
    })
}

/// `max |sum_k A_k ⊗ D_k - (A_Max + A_Dac + A_Nac)|` on a periodic grid.
pub fn coefficient_residual(ops: &ComplexOps) -> Result<f64> {
    ops.grid.require(Backend::Periodic, "coefficient_residual")?;
    let d = ops.partials.as_ref().expect("periodic complex has partials");
    let a = assemble_block(BlockTag::Extended, ops)?.to_sparse();
    let np = ops.grid.periodic_points();
    let mut t = Vec::new();
    for (ak, dk) in coefficient_matrices().iter().zip(d.iter()) {
        for r in 0..8 {
            for c in 0..8 {
                if ak[(r, c)] != 0.0 {
                    t.extend(dk.triplets().map(|(i, j, v)| (r * np + i, c * np + j, ak[(r, c)] * v)));
                }
            }
        }
    }
    let sum = SparseOp::from_triplets(a.rows().clone(), a.cols().clone(), t);
    Ok(sum.sub(&a)?.max_abs())
}

/// Reduced row echelon form in place; returns pivot columns.
fn rref(m: &mut DMatrix<f64>, tol: f64) -> Vec<usize> {
    let (rows, cols) = m.shape();
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..cols {
        if r == rows {
            break;
        }
        let (best, val) = (r..rows).map(|i| (i, m[(i, c)].abs())).fold((r, 0.0), |a, b| if b.1 > a.1 { b } else { a });
        if val <= tol {
            continue;
        }
        m.swap_rows(r, best);
        let p = m[(r, c)];
        for j in 0..cols {
            m[(r, j)] /= p;
        }
        for i in 0..rows {
            if i != r && m[(i, c)] != 0.0 {
                let f = m[(i, c)];
                for j in 0..cols {
                    m[(i, j)] -= f * m[(r, j)];
                }
            }
        }
        pivots.push(c);
        r += 1;
    }
    pivots
}

fn skew_basis(a: usize, b: usize) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(8, 8);
    e[(a, b)] = 1.0;
    e[(b, a)] = -1.0;
    e
}

/// Null space of `{S skew, S A_k = A_k S}` from the reduced row echelon form.
///
/// Basis vectors are indexed by free unknowns in increasing order, where the
/// unknowns are the upper-triangular entries of `S` in row-major order. Each
/// basis element is scaled to unit max-norm.
pub fn commuting_skew_basis(a: &[DMatrix<f64>; 3]) -> Vec<DMatrix<f64>> {
    let pairs: Vec<(usize, usize)> = (0..8).flat_map(|i| (i + 1..8).map(move |j| (i, j))).collect();
    let mut m = DMatrix::zeros(3 * 64, pairs.len());
    for (u, &(i, j)) in pairs.iter().enumerate() {
        let e = skew_basis(i, j);
        for (k, ak) in a.iter().enumerate() {
            let comm = &e * ak - ak * &e;
            for r in 0..8 {
                for c in 0..8 {
                    m[(k * 64 + r * 8 + c, u)] = comm[(r, c)];
                }
            }
        }
    }
    let pivots = rref(&mut m, 1e-12);
    let free: Vec<usize> = (0..pairs.len()).filter(|c| !pivots.contains(c)).collect();
    free.iter()
        .map(|&f| {
            let mut x = vec![0.0; pairs.len()];
            x[f] = 1.0;
            for (row, &p) in pivots.iter().enumerate() {
                x[p] = -m[(row, f)];
            }
            let mut s = DMatrix::zeros(8, 8);
            for (u, &(i, j)) in pairs.iter().enumerate() {
                s += skew_basis(i, j) * x[u];
            }
            let n = s.amax();
            s / n
        })
        .collect()
}

/// Default `S`: the first element of [`commuting_skew_basis`], or zero if the
/// constraint set only admits `S = 0`. Also returns the null-space dimension.
pub fn default_coupling_s(a: &[DMatrix<f64>; 3]) -> (DMatrix<f64>, usize) {
    let basis = commuting_skew_basis(a);
    let dim = basis.len();
    (basis.into_iter().next().unwrap_or_else(|| DMatrix::zeros(8, 8)), dim)
}

/// Coupling data `(A_k, S, α_k)`.
#[derive(Debug, Clone)]
pub struct Coupling {
    pub a: [DMatrix<f64>; 3],
    pub s: DMatrix<f64>,
    /// Spatially constant coefficients `α_k` in `g`.
    pub alpha_k: [f64; 3],
}

pub const COMMUTATOR_TOL: f64 = 1e-13;

impl Coupling {
    pub fn new(a: [DMatrix<f64>; 3], s: DMatrix<f64>, alpha_k: [f64; 3]) -> Result<Self> {
        for (k, ak) in a.iter().enumerate() {
            if ak.shape() != (8, 8) {
                return Err(Error::Coupling(format!("A_{} must be 8x8", k + 1)));
            }
            let asym = (ak - ak.transpose()).amax();
            if asym != 0.0 {
                return Err(Error::Coupling(format!("A_{} is not symmetric (defect {asym:e})", k + 1)));
            }
        }
        if s.shape() != (8, 8) {
            return Err(Error::Coupling("S must be 8x8".into()));
        }
        let skew = (&s + s.transpose()).amax();
        if skew != 0.0 {
            return Err(Error::Coupling(format!("S is not skew (defect {skew:e})")));
        }
        for (k, ak) in a.iter().enumerate() {
            let c = (&s * ak - ak * &s).amax();
            if c > COMMUTATOR_TOL {
                return Err(Error::Coupling(format!("S A_{0} != A_{0} S (defect {c:e})", k + 1)));
            }
        }
        Ok(Self { a, s, alpha_k })
    }

    /// Skips validation; used for negative controls.
    pub fn new_unchecked(a: [DMatrix<f64>; 3], s: DMatrix<f64>, alpha_k: [f64; 3]) -> Self {
        Self { a, s, alpha_k }
    }

    /// Shipped coefficients with the default `S`.
    pub fn standard(alpha_k: [f64; 3]) -> Result<Self> {
        let a = coefficient_matrices();
        let (s, _) = default_coupling_s(&a);
        Self::new(a, s, alpha_k)
    }

    /// `J_k = <ψ, A_k ψ>` per point, laid out as the `v1` slot.
    pub fn current(&self, psi: &[f64], np: usize) -> Vec<f64> {
        let mut j = vec![0.0; 3 * np];
        let mut v = [0.0; 8];
        for p in 0..np {
            for (c, x) in v.iter_mut().enumerate() {
                *x = psi[c * np + p];
            }
            for (k, ak) in self.a.iter().enumerate() {
                let mut q = 0.0;
                for r in 0..8 {
                    for c in 0..8 {
                        q += v[r] * ak[(r, c)] * v[c];
                    }
                }
                j[k * np + p] = q;
            }
        }
        j
    }

    /// Constant part `sum_k α_k S A_k` of the spinor source.
    pub fn linear_part(&self) -> DMatrix<f64> {
        let mut sa = DMatrix::zeros(8, 8);
        for (k, ak) in self.a.iter().enumerate() {
            sa += &self.s * ak * self.alpha_k[k];
        }
        sa
    }

    /// `g = α0 S ψ + sum_k α_k S A_k ψ` with `α0` a scalar field.
    pub fn spinor_source(&self, psi: &[f64], alpha0: &[f64], np: usize) -> Vec<f64> {
        self.source_with(psi, alpha0, np, &self.linear_part())
    }

    fn source_with(&self, psi: &[f64], alpha0: &[f64], np: usize, sa: &DMatrix<f64>) -> Vec<f64> {
        let mut g = vec![0.0; 8 * np];
        for p in 0..np {
            for r in 0..8 {
                let mut acc = 0.0;
                for c in 0..8 {
                    let x = psi[c * np + p];
                    acc += (alpha0[p] * self.s[(r, c)] + sa[(r, c)]) * x;
                }
                g[r * np + p] = acc;
            }
        }
        g
    }
}

/// `|ψ|^2` per point.
pub fn density(psi: &[f64], np: usize) -> Vec<f64> {
    (0..np).map(|p| (0..8).map(|c| psi[c * np + p].powi(2)).sum()).collect()
}

/// `blockdiag(A, M1 + A, -A)` on three stacked extended layouts.
pub fn assemble_coupled(ops: &ComplexOps) -> Result<BlockOp> {
    ops.grid.require(Backend::Periodic, "assemble_coupled")?;
    let ext = Layout::extended(ops);
    let a = assemble_block(BlockTag::Extended, ops)?.to_sparse();
    let m1 = kron_constant(&m1_matrix(), ops.grid.periodic_points()).with_spaces(a.rows().clone(), a.cols().clone());
    let blocks = [a.clone(), m1.add(&a)?, a.neg()];
    let layout = ext
        .clone()
        .rename(&["U0", "U1", "U2", "U3"])
        .concat(&ext.clone().rename(&["psi0", "psi1", "psi2", "psi3"]))
        .concat(&ext.clone().rename(&["alpha0", "alpha1", "alpha2", "alpha3"]));
    let n = ext.total();
    let space = layout.stacked_space();
    let mut t = Vec::new();
    for (b, op) in blocks.iter().enumerate() {
        t.extend(op.triplets().map(|(r, c, v)| (b * n + r, b * n + c, v)));
    }
    BlockOp::from_sparse(ops.grid, layout, BlockTag::Custom, &SparseOp::from_triplets(space.clone(), space, t))
}

#[derive(Debug, Clone)]
pub struct MdInitial {
    pub e0: Vec<f64>,
    pub h0: Vec<f64>,
    pub psi0: Vec<f64>,
    pub alpha10: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PicardConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PicardConfig {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 50 }
    }
}

pub const ADMISSIBILITY_TOL: f64 = 1e-8;

/// Coupled trajectory and its Picard statistics.
#[derive(Debug, Clone)]
pub struct MdTrajectory {
    pub tg: TimeGrid,
    pub layout: Layout,
    pub npoints: usize,
    pub cell_volume: f64,
    pub fields: Vec<Vec<f64>>,
    pub psi: Vec<Vec<f64>>,
    pub alpha: Vec<Vec<f64>>,
    pub current: Vec<Vec<f64>>,
    pub picard_iterations: Vec<usize>,
    /// Ratio of the last two Picard increments at each step.
    pub contraction: Vec<f64>,
    /// Uniform background subtracted from `|ψ|^2`.
    pub rho_background: f64,
    pub admissibility_defect: f64,
}

impl MdTrajectory {
    /// `h^3 sum |ψ|^2` per step.
    pub fn total_charge(&self) -> Vec<f64> {
        self.psi.iter().map(|p| sparse::inner(p, p, self.cell_volume)).collect()
    }
}

/// Check `|ψ0|^2 - ρ_bg = div E0` and `H0 = -curl_int α10`; returns the
/// background and the larger defect.
pub fn admissibility(ops: &ComplexOps, init: &MdInitial) -> Result<(f64, f64)> {
    let np = ops.grid.periodic_points();
    let q = density(&init.psi0, np);
    let de = ops.div.apply(&init.e0)?;
    // On the torus div E0 has zero mean, so only a neutralised density can match it.
    let bg = q.iter().zip(&de).map(|(a, b)| a - b).sum::<f64>() / np as f64;
    let charge = q.iter().zip(&de).map(|(a, b)| (a - bg - b).abs()).fold(0.0, f64::max);
    let ca = ops.curl_int.apply(&init.alpha10)?;
    let magnetic = init.h0.iter().zip(&ca).map(|(h, c)| (h + c).abs()).fold(0.0, f64::max);
    Ok((bg, charge.max(magnetic)))
}

/// Implicit Euler in time with a Picard iteration per step.
pub fn solve_maxwell_dirac(
    grid: &GridSpec,
    init: &MdInitial,
    coupling: &Coupling,
    tg: &TimeGrid,
    picard: PicardConfig,
) -> Result<MdTrajectory> {
    grid.require(Backend::Periodic, "solve_maxwell_dirac")?;
    let ops = ComplexOps::build(grid)?;
    let l = Layout::extended(&ops);
    let np = grid.periodic_points();
    let n = l.total();
    if init.e0.len() != ops.vector1.dofs
        || init.h0.len() != ops.vector2.dofs
        || init.psi0.len() != n
        || init.alpha10.len() != ops.vector1.dofs
    {
        return Err(Error::InvalidSource("initial data do not match the grid".into()));
    }
    let (bg, defect) = admissibility(&ops, init)?;
    if defect > ADMISSIBILITY_TOL {
        return Err(Error::Admissibility(format!(
            "|psi0|^2 = div E0 and H0 = -curl_int alpha10 violated by {defect:e}"
        )));
    }
    let tau = tg.tau;
    let a = assemble_block(BlockTag::Extended, &ops)?.to_sparse();
    let id = SparseOp::identity(a.rows().clone()).scale(1.0 / tau);
    let m1 = kron_constant(&m1_matrix(), np).with_spaces(a.rows().clone(), a.cols().clone());
    let lu_u = Factorization::new(&id.add(&a)?)?;
    // The constant-coefficient part of g is linear in ψ and goes into the
    // cached factorization; only α0 S ψ is lagged in the Picard loop.
    let lin = kron_constant(&coupling.linear_part(), np).with_spaces(a.rows().clone(), a.cols().clone());
    let lu_psi = Factorization::new(&id.add(&m1)?.add(&a)?.sub(&lin)?)?;
    let zero8 = DMatrix::zeros(8, 8);
    let lu_alpha = Factorization::new(&id.sub(&a)?)?;

    let mut u_imp = l.zeros();
    u_imp[l.range(1)].copy_from_slice(&init.e0);
    u_imp[l.range(2)].copy_from_slice(&init.h0);
    let mut a_imp = l.zeros();
    a_imp[l.range(1)].copy_from_slice(&init.alpha10);

    let solve = |lu: &Factorization, b: &[f64], step: usize| -> Result<Vec<f64>> {
        let (x, r) = lu.solve(b)?;
        if r > SOLVE_TOL {
            return Err(Error::SolverBreakdown { step, residual: r });
        }
        Ok(x)
    };

    let mut out = MdTrajectory {
        tg: *tg,
        layout: l.clone(),
        npoints: np,
        cell_volume: grid.cell_volume(),
        fields: Vec::with_capacity(tg.steps),
        psi: Vec::with_capacity(tg.steps),
        alpha: Vec::with_capacity(tg.steps),
        current: Vec::with_capacity(tg.steps),
        picard_iterations: Vec::with_capacity(tg.steps),
        contraction: Vec::with_capacity(tg.steps),
        rho_background: bg,
        admissibility_defect: defect,
    };
    let (mut u_prev, mut psi_prev, mut al_prev) = (l.zeros(), l.zeros(), l.zeros());
    for step in 0..tg.steps {
        let mut hist_u: Vec<f64> = u_prev.iter().map(|x| x / tau).collect();
        let mut hist_psi: Vec<f64> = psi_prev.iter().map(|x| x / tau).collect();
        let mut hist_al: Vec<f64> = al_prev.iter().map(|x| x / tau).collect();
        if step == 0 {
            hist_u.iter_mut().zip(&u_imp).for_each(|(h, v)| *h += v / tau);
            hist_psi.iter_mut().zip(&init.psi0).for_each(|(h, v)| *h += v / tau);
            hist_al.iter_mut().zip(&a_imp).for_each(|(h, v)| *h += v / tau);
        }
        let (mut u, mut psi, mut al) = if step == 0 {
            (u_imp.clone(), init.psi0.clone(), a_imp.clone())
        } else {
            (u_prev.clone(), psi_prev.clone(), al_prev.clone())
        };
        let mut last_inc = f64::INFINITY;
        let mut ratio = 0.0;
        let mut iters = 0;
        let mut converged = false;
        let mut j = vec![0.0; 3 * np];
        while iters < picard.max_iter {
            iters += 1;
            let rho: Vec<f64> = density(&psi, np).iter().map(|q| q - bg).collect();
            j = coupling.current(&psi, np);
            let g = coupling.source_with(&psi, &al[l.range(0)], np, &zero8);
            let mut bu = hist_u.clone();
            bu[l.range(0)].iter_mut().zip(&rho).for_each(|(b, r)| *b += r);
            bu[l.range(1)].iter_mut().zip(&j).for_each(|(b, x)| *b -= x);
            let u_new = solve(&lu_u, &bu, step)?;
            let bp: Vec<f64> = hist_psi.iter().zip(&g).map(|(h, x)| h + x).collect();
            let psi_new = solve(&lu_psi, &bp, step)?;
            let ba: Vec<f64> = hist_al.iter().zip(&u_new).map(|(h, x)| h + x).collect();
            let al_new = solve(&lu_alpha, &ba, step)?;
            let inc = sparse::max_abs_diff(&psi_new, &psi)
                .max(sparse::max_abs_diff(&al_new, &al))
                .max(sparse::max_abs_diff(&u_new, &u));
            if last_inc.is_finite() && last_inc > 0.0 {
                ratio = inc / last_inc;
            }
            last_inc = inc;
            u = u_new;
            psi = psi_new;
            al = al_new;
            if inc <= picard.tol {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::PicardDiverged {
                step,
                increment: last_inc,
                contraction: ratio,
            });
        }
        out.fields.push(u.clone());
        out.psi.push(psi.clone());
        out.alpha.push(al.clone());
        out.current.push(j);
        out.picard_iterations.push(iters);
        out.contraction.push(ratio);
        u_prev = u;
        psi_prev = psi;
        al_prev = al;
    }
    Ok(out)
}

/// `r^n = |∂0 |ψ|^2 + div J|` for `n >= 1`, the impulse step excluded.
/// Returns the series (starting at step 1) and its maximum.
pub fn charge_residual(traj: &MdTrajectory, grid: &GridSpec) -> Result<(Vec<f64>, f64)> {
    let ops = ComplexOps::build(grid)?;
    let np = traj.npoints;
    let q: Vec<Vec<f64>> = traj.psi.iter().map(|p| density(p, np)).collect();
    let dq = discrete_d0(&q, traj.tg.tau);
    let mut series = Vec::with_capacity(q.len().saturating_sub(1));
    for n in 1..q.len() {
        let dj = ops.div.apply(&traj.current[n])?;
        let r: Vec<f64> = dq[n].iter().zip(&dj).map(|(a, b)| a + b).collect();
        series.push(sparse::norm(&r, traj.cell_volume));
    }
    let max = series.iter().copied().fold(0.0, f64::max);
    Ok((series, max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid2() -> GridSpec {
        GridSpec::periodic([2, 2, 2], 1.0).unwrap()
    }

    /// Small admissible data on the periodic 2^3 grid: every point carries a
    /// spinor of the same norm.
    fn small_data(scale: f64, seed: u64) -> MdInitial {
        let g = grid2();
        let ops = ComplexOps::build(&g).unwrap();
        let np = 8;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut psi0 = vec![0.0; 8 * np];
        for p in 0..np {
            let v: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            for c in 0..8 {
                psi0[c * np + p] = scale * v[c] / n;
            }
        }
        MdInitial {
            e0: (0..ops.vector1.dofs).map(|_| scale * rng.random_range(-1.0..1.0)).collect(),
            h0: vec![0.0; ops.vector2.dofs],
            psi0,
            alpha10: (0..ops.vector1.dofs).map(|_| scale * rng.random_range(-1.0..1.0)).collect(),
        }
    }

    #[test]
    fn printed_m1_is_swapped_hamiltonian_form() {
        assert_eq!(m1_form_residual(), 0.0);
        let m = m1_matrix();
        assert_eq!((&m + m.transpose()).amax(), 0.0);
    }

    #[test]
    fn coefficients_are_symmetric_and_match_operator() {
        for ak in coefficient_matrices() {
            assert_eq!((&ak - ak.transpose()).amax(), 0.0);
        }
        for n in [3, 4] {
            let ops = ComplexOps::build(&GridSpec::periodic([n, n, n], 1.0).unwrap()).unwrap();
            assert_eq!(coefficient_residual(&ops).unwrap(), 0.0);
        }
        // A_1 read off the operator: div/grad in (0,1),(1,0),(5,7),(7,5),
        // curl entries -∂1 at (2,6),(6,2)... in (v1,v2) and (v2,v1).
        let a1 = &coefficient_matrices()[0];
        assert_eq!(a1[(0, 1)], 1.0);
        assert_eq!(a1[(4, 7)], 1.0);
        assert_eq!(a1[(2, 6)], 1.0);
        assert_eq!(a1[(3, 5)], -1.0);
        assert_eq!(a1[(6, 2)], 1.0);
        assert_eq!(a1[(5, 3)], -1.0);
    }

    #[test]
    fn default_s_satisfies_constraints() {
        let a = coefficient_matrices();
        let (s, dim) = default_coupling_s(&a);
        assert!(dim > 0);
        assert_eq!(s.amax(), 1.0);
        assert!(Coupling::new(a.clone(), s.clone(), [0.1, 0.2, 0.3]).is_ok());
        for b in commuting_skew_basis(&a) {
            assert_eq!((&b + b.transpose()).amax(), 0.0);
            for ak in &a {
                assert!((&b * ak - ak * &b).amax() <= COMMUTATOR_TOL);
            }
        }
    }

    #[test]
    fn coupling_rejects_bad_matrices() {
        let a = coefficient_matrices();
        let mut bad = a.clone();
        bad[1][(0, 2)] += 0.5;
        assert!(matches!(Coupling::new(bad, DMatrix::zeros(8, 8), [0.0; 3]), Err(Error::Coupling(_))));
        let s = skew_basis(0, 1);
        let e = Coupling::new(a, s, [0.0; 3]).unwrap_err();
        assert!(e.to_string().contains("A_"));
    }

    #[test]
    fn quadratic_forms() {
        let c = Coupling::standard([0.3, -0.2, 0.5]).unwrap();
        let np = 3;
        let z = vec![0.0; 8 * np];
        assert!(c.current(&z, np).iter().all(|&x| x == 0.0));
        assert!(c.spinor_source(&z, &[1.0; 3], np).iter().all(|&x| x == 0.0));
        for comp in 0..8 {
            let mut psi = vec![0.0; 8 * np];
            psi[comp * np + 1] = 1.0;
            let j = c.current(&psi, np);
            for k in 0..3 {
                assert_eq!(j[k * np + 1], c.a[k][(comp, comp)]);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let psi: Vec<f64> = (0..8 * np).map(|_| rng.random_range(-1.0..1.0)).collect();
        let al0: Vec<f64> = (0..np).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = c.spinor_source(&psi, &al0, np);
        for p in 0..np {
            let dot: f64 = (0..8).map(|r| psi[r * np + p] * g[r * np + p]).sum();
            assert!(dot.abs() < 1e-15);
        }
        let m = m1_matrix();
        let v = nalgebra::DVector::from_fn(8, |i, _| psi[i]);
        assert_eq!(v.dot(&(&m * &v)), 0.0);
    }

    #[test]
    fn zero_spinor_decouples() {
        let g = grid2();
        let mut init = small_data(1e-3, 2);
        init.psi0.iter_mut().for_each(|x| *x = 0.0);
        let c = Coupling::standard([0.3, -0.2, 0.5]).unwrap();
        let tg = TimeGrid::new(0.1, 10, 0.0, 1.0).unwrap();
        let t = solve_maxwell_dirac(&g, &init, &c, &tg, PicardConfig::default()).unwrap();
        assert!(t.psi.iter().flatten().all(|&x| x == 0.0));
        assert!(t.current.iter().flatten().all(|&x| x == 0.0));
        let (r, m) = charge_residual(&t, &g).unwrap();
        assert_eq!(m, 0.0);
        assert_eq!(r.len(), 9);
    }

    #[test]
    fn small_data_picard_and_first_order_charge() {
        let g = grid2();
        let init = small_data(1e-3, 3);
        let c = Coupling::standard([0.3, -0.2, 0.5]).unwrap();
        let mut maxes = Vec::new();
        let mut finals = Vec::new();
        for (tau, steps) in [(0.1, 10), (0.05, 20), (0.025, 40)] {
            let tg = TimeGrid::new(tau, steps, 0.0, 1.0).unwrap();
            let t = solve_maxwell_dirac(&g, &init, &c, &tg, PicardConfig::default()).unwrap();
            assert!(t.picard_iterations.iter().all(|&k| k <= 5), "{:?} {:?}", t.picard_iterations, t.contraction);
            maxes.push(charge_residual(&t, &g).unwrap().1);
            finals.push(t.psi.last().unwrap().clone());
        }
        for w in maxes.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!((order - 1.0).abs() <= 0.2, "{maxes:?}");
        }
        let _ = finals;
    }

    #[test]
    fn inadmissible_data_rejected() {
        let g = grid2();
        let mut init = small_data(1e-3, 4);
        init.psi0[0] += 1e-3;
        let c = Coupling::standard([0.0; 3]).unwrap();
        let tg = TimeGrid::new(0.1, 2, 0.0, 1.0).unwrap();
        assert!(matches!(
            solve_maxwell_dirac(&g, &init, &c, &tg, PicardConfig::default()),
            Err(Error::Admissibility(_))
        ));
    }

    #[test]
    fn non_skew_s_breaks_charge_convergence() {
        let g = grid2();
        let init = small_data(1e-3, 5);
        let good = Coupling::standard([0.3, -0.2, 0.5]).unwrap();
        let bad = Coupling::new_unchecked(good.a.clone(), &good.s + DMatrix::identity(8, 8), good.alpha_k);
        let mut maxes = Vec::new();
        for (tau, steps) in [(0.05, 20), (0.025, 40)] {
            let tg = TimeGrid::new(tau, steps, 0.0, 1.0).unwrap();
            let t = solve_maxwell_dirac(&g, &init, &bad, &tg, PicardConfig::default()).unwrap();
            maxes.push(charge_residual(&t, &g).unwrap().1);
        }
        assert!(maxes[1] > 0.8 * maxes[0], "{maxes:?}");
    }

    #[test]
    fn coupled_operator_blocks() {
        let ops = ComplexOps::build(&GridSpec::periodic([3, 3, 3], 1.0).unwrap()).unwrap();
        let b = assemble_coupled(&ops).unwrap();
        assert_eq!(b.layout().len(), 12);
        assert_eq!(b.skew_defect(), 0.0);
    }
}
