//! Scalar and vector potentials of Maxwell fields from the extended system
//! `(∂0 - A) α = (0, E, H, 0) + δ ⊗ (0, α10, 0, 0)` with `M0 = E = 1`.

use nalgebra::DVector;
use serde::Serialize;

use crate::block::{assemble_block, BlockTag};
use crate::discrete::ComplexOps;
use crate::error::{Error, Result};
use crate::evo::{discrete_d0, discrete_d0_inverse, implicit_euler_seq, EvoSystem, TimeGrid, Trajectory};
use crate::grid::GridSpec;
use crate::layout::Layout;
use crate::sparse::{self, SparseOp};

/// Default tolerance for the three clauses of [`verify_potential`].
pub const POTENTIAL_TOL: f64 = 1e-8;

/// Tolerance on `|H0 + curl_int α10|` below which the hypothesis counts as met.
pub const HYPOTHESIS_TOL: f64 = 1e-10;

/// Extended-layout operator `A = A_Max + A_Dac + A_Nac` together with the complex.
#[derive(Debug, Clone)]
pub struct PotentialProblem {
    pub ops: ComplexOps,
    pub layout: Layout,
    pub a: SparseOp,
}

impl PotentialProblem {
    pub fn new(grid: &GridSpec) -> Result<Self> {
        let ops = ComplexOps::build(grid)?;
        let a = assemble_block(BlockTag::Extended, &ops)?;
        Ok(Self {
            layout: a.layout().clone(),
            a: a.to_sparse(),
            ops,
        })
    }

    fn cell_volume(&self) -> f64 {
        self.ops.grid.cell_volume()
    }

    /// Solve `(∂0 + s A) x = g` for `s = ±1`.
    pub fn resolvent(&self, sign: f64, g: &[Vec<f64>], tau: f64) -> Result<Vec<Vec<f64>>> {
        let sys = EvoSystem::unit_from_sparse(&self.layout, self.cell_volume(), self.a.scale(sign))?;
        Ok(implicit_euler_seq(&sys, g, tau)?.0)
    }

    /// `(∂0 + s A) x`, applied forward.
    pub fn apply(&self, sign: f64, x: &[Vec<f64>], tau: f64) -> Result<Vec<Vec<f64>>> {
        let mut out = discrete_d0(x, tau);
        for (o, v) in out.iter_mut().zip(x) {
            let av = self.a.apply(v)?;
            o.iter_mut().zip(&av).for_each(|(y, a)| *y += sign * a);
        }
        Ok(out)
    }
}

/// Potential trajectory `α = (α0, α1, α2, α3)` with diagnostics.
#[derive(Debug, Clone)]
pub struct PotentialState {
    pub tg: TimeGrid,
    pub layout: Layout,
    pub alpha: Vec<Vec<f64>>,
    /// `max |H0 + curl_int α10|` with `H0` recovered from the field trajectory.
    pub hypothesis_defect: f64,
    pub warnings: Vec<String>,
}

impl PotentialState {
    pub fn slot(&self, s: usize) -> Vec<Vec<f64>> {
        self.alpha.iter().map(|a| a[self.layout.range(s)].to_vec()).collect()
    }
}

/// Recover the impulse `H0` from an implicit Euler Maxwell trajectory:
/// `H0 = H^0 + tau curl_int E^0`.
pub fn recover_h0(eh: &Trajectory, ops: &ComplexOps) -> Result<Vec<f64>> {
    let first = eh.samples.first().ok_or_else(|| Error::InvalidSource("empty trajectory".into()))?;
    let e0 = &first[eh.layout.range(0)];
    let h0 = &first[eh.layout.range(1)];
    let ce = ops.curl_int.apply(e0)?;
    Ok(h0.iter().zip(&ce).map(|(h, c)| h + eh.tg.tau * c).collect())
}

fn check_eh(eh: &Trajectory, ops: &ComplexOps) -> Result<()> {
    let ok = eh.layout.len() == 2 && eh.layout.slot(0) == &ops.vector1 && eh.layout.slot(1) == &ops.vector2;
    if !ok {
        return Err(Error::LayoutMismatch {
            op: "solve_potential",
            detail: "expected an (E, H) trajectory on the same grid".into(),
        });
    }
    Ok(())
}

/// Causal solve of `(∂0 - A) α = (0, E, H, 0) + δ ⊗ (0, α10, 0, 0)`.
pub fn solve_potential(eh: &Trajectory, alpha10: &[f64], grid: &GridSpec, tg: &TimeGrid) -> Result<PotentialState> {
    let prob = PotentialProblem::new(grid)?;
    check_eh(eh, &prob.ops)?;
    if alpha10.len() != prob.ops.vector1.dofs {
        return Err(Error::InvalidSource("alpha10 must live on the E space".into()));
    }
    if eh.samples.len() != tg.steps {
        return Err(Error::InvalidSource("trajectory and time grid disagree".into()));
    }
    let l = &prob.layout;
    let mut rhs: Vec<Vec<f64>> = eh
        .samples
        .iter()
        .map(|x| {
            let mut v = l.zeros();
            v[l.offset(1)..l.offset(3)].copy_from_slice(x);
            v
        })
        .collect();
    if let Some(r0) = rhs.first_mut() {
        r0[l.range(1)].iter_mut().zip(alpha10).for_each(|(x, a)| *x += a / tg.tau);
    }
    let alpha = prob.resolvent(-1.0, &rhs, tg.tau)?;

    let h0 = recover_h0(eh, &prob.ops)?;
    let ca = prob.ops.curl_int.apply(alpha10)?;
    let hypothesis_defect = h0.iter().zip(&ca).map(|(h, c)| (h + c).abs()).fold(0.0, f64::max);
    let mut warnings = Vec::new();
    if hypothesis_defect > HYPOTHESIS_TOL {
        warnings.push(format!("H0 + curl_int alpha10 = {hypothesis_defect:e}; the reconstruction hypothesis is violated"));
    }
    Ok(PotentialState {
        tg: *tg,
        layout: l.clone(),
        alpha,
        hypothesis_defect,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PotentialReport {
    /// `max_n max(|α2^n|, |α3^n|)`.
    pub clause_a: f64,
    /// `max |E - ∂0(α1 - χ ⊗ α10) + grad_int α0|`.
    pub clause_b: f64,
    /// `max |H + curl_int α1|`.
    pub clause_c: f64,
    pub tol: f64,
    pub failed: Vec<String>,
}

impl PotentialReport {
    pub fn passed(&self) -> bool {
        self.failed.is_empty()
    }
}

/// Check `α2 = α3 = 0`, `E = ∂0(α1 - χ ⊗ α10) - grad_int α0` and `H = -curl_int α1`.
pub fn verify_potential(
    state: &PotentialState,
    eh: &Trajectory,
    alpha10: &[f64],
    grid: &GridSpec,
    tol: f64,
) -> Result<PotentialReport> {
    if state.alpha.len() != eh.samples.len() {
        return Err(Error::InvalidSource("potential and field trajectories differ in length".into()));
    }
    let ops = ComplexOps::build(grid)?;
    check_eh(eh, &ops)?;
    let l = &state.layout;
    let tau = state.tg.tau;
    let mut clause_a: f64 = 0.0;
    for a in &state.alpha {
        clause_a = clause_a.max(sparse::max_abs(&a[l.range(2)])).max(sparse::max_abs(&a[l.range(3)]));
    }
    // α1 - χ ⊗ α10 is α1 - α10 on every sample and zero before step 0.
    let shifted: Vec<Vec<f64>> = state
        .alpha
        .iter()
        .map(|a| a[l.range(1)].iter().zip(alpha10).map(|(x, y)| x - y).collect())
        .collect();
    let d = discrete_d0(&shifted, tau);
    let mut clause_b: f64 = 0.0;
    let mut clause_c: f64 = 0.0;
    for (n, x) in eh.samples.iter().enumerate() {
        let a = &state.alpha[n];
        let g = ops.grad_int.apply(&a[l.range(0)])?;
        let e = &x[eh.layout.range(0)];
        for ((ei, di), gi) in e.iter().zip(&d[n]).zip(&g) {
            clause_b = clause_b.max((ei - di + gi).abs());
        }
        let c = ops.curl_int.apply(&a[l.range(1)])?;
        let h = &x[eh.layout.range(1)];
        clause_c = clause_c.max(sparse::max_abs_diff(h, &c.iter().map(|v| -v).collect::<Vec<_>>()));
    }
    let mut failed = Vec::new();
    for (name, v) in [("a", clause_a), ("b", clause_b), ("c", clause_c)] {
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(v <= tol) {
            failed.push(format!("clause ({name}) residual {v:e} exceeds {tol:e}"));
        }
    }
    Ok(PotentialReport {
        clause_a,
        clause_b,
        clause_c,
        tol,
        failed,
    })
}

/// Gauge change `α' = (α0 + ∂0 φ, α1 + grad_int φ, α2, α3)`.
#[derive(Debug, Clone)]
pub struct GaugeResult {
    pub alpha: Vec<Vec<f64>>,
    /// `((∂0² - div grad_int) φ, 0, 0, 0)`.
    pub rhs_shift: Vec<Vec<f64>>,
    /// `max |(∂0 - A) α' - (∂0 - A) α - rhs_shift|`.
    pub identity_residual: f64,
}

pub fn gauge_transform(alpha: &[Vec<f64>], phi: &[Vec<f64>], grid: &GridSpec, tg: &TimeGrid) -> Result<GaugeResult> {
    let prob = PotentialProblem::new(grid)?;
    let l = &prob.layout;
    let ops = &prob.ops;
    if alpha.len() != phi.len() || phi.iter().any(|p| p.len() != ops.scalar0.dofs) {
        return Err(Error::InvalidSource("phi must be a scalar0 trajectory matching alpha".into()));
    }
    let tau = tg.tau;
    let dphi = discrete_d0(phi, tau);
    let ddphi = discrete_d0(&dphi, tau);
    let mut out = Vec::with_capacity(alpha.len());
    let mut shift = Vec::with_capacity(alpha.len());
    for n in 0..alpha.len() {
        let mut a = alpha[n].clone();
        a[l.range(0)].iter_mut().zip(&dphi[n]).for_each(|(x, d)| *x += d);
        let g = ops.grad_int.apply(&phi[n])?;
        a[l.range(1)].iter_mut().zip(&g).for_each(|(x, d)| *x += d);
        out.push(a);
        let lap = ops.div.apply(&g)?;
        let mut s = l.zeros();
        s[l.range(0)].iter_mut().zip(ddphi[n].iter().zip(&lap)).for_each(|(x, (d, q))| *x = d - q);
        shift.push(s);
    }
    let before = prob.apply(-1.0, alpha, tau)?;
    let after = prob.apply(-1.0, &out, tau)?;
    let mut identity_residual: f64 = 0.0;
    for n in 0..alpha.len() {
        for i in 0..l.total() {
            identity_residual = identity_residual.max((after[n][i] - before[n][i] - shift[n][i]).abs());
        }
    }
    Ok(GaugeResult {
        alpha: out,
        rhs_shift: shift,
        identity_residual,
    })
}

/// `ρ^n = -div (∂0^-1 J)^n + div E0` for `t_n >= 0`.
pub fn compatibility_rhs(j: &[Vec<f64>], e0: &[f64], grid: &GridSpec, tg: &TimeGrid) -> Result<Vec<Vec<f64>>> {
    let ops = ComplexOps::build(grid)?;
    let ij = discrete_d0_inverse(j, tg.tau);
    let de = ops.div.apply(e0)?;
    ij.iter()
        .map(|x| {
            let dj = ops.div.apply(x)?;
            Ok(dj.iter().zip(&de).map(|(a, b)| b - a).collect())
        })
        .collect()
}

/// Distance of `h` from the range of `curl_int`, by least squares.
pub fn curl_range_residual(h: &[f64], ops: &ComplexOps) -> Result<f64> {
    let c = ops.curl_int.to_dense();
    if c.nrows() * c.ncols() > 4_000_000 {
        return Err(Error::TooLarge {
            dim: c.nrows().max(c.ncols()),
            limit: 2000,
        });
    }
    let svd = c.clone().svd(true, true);
    let b = DVector::from_column_slice(h);
    let eps = 1e-12 * svd.singular_values.max().max(1.0);
    let x = svd.solve(&b, eps).map_err(|e| Error::Identity(e.to_string()))?;
    let r = &b - &c * x;
    Ok(r.amax())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evo::SourceTerm;
    use crate::material::MaterialLaw;
    use crate::transfer::solve_maxwell;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rv(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn grid() -> GridSpec {
        GridSpec::bounded([3, 3, 3], 1.0).unwrap()
    }

    /// Random admissible scenario: returns `(E, H)` trajectory and `α10`.
    fn scenario(seed: u64, admissible: bool) -> (Trajectory, Vec<f64>, TimeGrid) {
        let g = grid();
        let ops = ComplexOps::build(&g).unwrap();
        let l = Layout::maxwell(&ops);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tg = TimeGrid::new(0.05, 30, 0.0, 1.0).unwrap();
        let alpha10 = rv(&mut rng, ops.vector1.dofs);
        let h0: Vec<f64> = if admissible {
            ops.curl_int.apply(&alpha10).unwrap().iter().map(|x| -x).collect()
        } else {
            rv(&mut rng, ops.vector2.dofs)
        };
        let e0 = rv(&mut rng, ops.vector1.dofs);
        let j: Vec<Vec<f64>> = (0..tg.steps)
            .map(|_| {
                let mut v = rv(&mut rng, ops.vector1.dofs).iter().map(|x| -x).collect::<Vec<_>>();
                v.extend(std::iter::repeat_n(0.0, ops.vector2.dofs));
                v
            })
            .collect();
        let mut imp = e0;
        imp.extend(h0);
        let f = SourceTerm::from_samples(j).with_impulse(0, imp);
        let eh = solve_maxwell(&MaterialLaw::identity(&l), &g, &f, &tg).unwrap();
        (eh, alpha10, tg)
    }

    #[test]
    fn zero_fields_give_zero_potential() {
        let g = grid();
        let ops = ComplexOps::build(&g).unwrap();
        let l = Layout::maxwell(&ops);
        let tg = TimeGrid::new(0.1, 5, 0.0, 1.0).unwrap();
        let eh = solve_maxwell(&MaterialLaw::identity(&l), &g, &SourceTerm::zeros(l.total(), 5), &tg).unwrap();
        let st = solve_potential(&eh, &vec![0.0; ops.vector1.dofs], &g, &tg).unwrap();
        assert!(st.alpha.iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn admissible_scenarios_reconstruct() {
        for seed in 0..3 {
            let (eh, a10, tg) = scenario(seed, true);
            let st = solve_potential(&eh, &a10, &grid(), &tg).unwrap();
            assert!(st.warnings.is_empty(), "{:?}", st.warnings);
            let r = verify_potential(&st, &eh, &a10, &grid(), POTENTIAL_TOL).unwrap();
            assert!(r.passed(), "{r:?}");
            assert!(r.clause_a <= 1e-9);
        }
    }

    #[test]
    fn violated_hypothesis_fails_clause_a() {
        let (eh, a10, tg) = scenario(7, false);
        let st = solve_potential(&eh, &a10, &grid(), &tg).unwrap();
        assert!(!st.warnings.is_empty());
        let r = verify_potential(&st, &eh, &a10, &grid(), POTENTIAL_TOL).unwrap();
        assert!(r.clause_a > POTENTIAL_TOL);
        assert!(r.failed.iter().any(|f| f.contains("(a)")));
    }

    #[test]
    fn known_potential_is_recovered() {
        // Fields built from a potential in the gauge ∂0 α0 = div α1 reproduce it.
        let g = grid();
        let prob = PotentialProblem::new(&g).unwrap();
        let ops = &prob.ops;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tg = TimeGrid::new(0.05, 20, 0.0, 1.0).unwrap();
        let a10 = rv(&mut rng, ops.vector1.dofs);
        let a1: Vec<Vec<f64>> = (0..tg.steps).map(|_| rv(&mut rng, ops.vector1.dofs)).collect();
        let div_a1: Vec<Vec<f64>> = a1.iter().map(|x| ops.div.apply(x).unwrap()).collect();
        let a0 = discrete_d0_inverse(&div_a1, tg.tau);
        let l = Layout::maxwell(ops);
        let mut samples = Vec::new();
        for n in 0..tg.steps {
            let prev: Vec<f64> = if n == 0 { a10.clone() } else { a1[n - 1].clone() };
            let ga = ops.grad_int.apply(&a0[n]).unwrap();
            let mut e: Vec<f64> = a1[n].iter().zip(&prev).zip(&ga).map(|((x, p), q)| (x - p) / tg.tau - q).collect();
            let h: Vec<f64> = ops.curl_int.apply(&a1[n]).unwrap().iter().map(|x| -x).collect();
            e.extend(h);
            samples.push(e);
        }
        let eh = Trajectory {
            tg,
            layout: l,
            cell_volume: 1.0,
            samples,
            solver: crate::evo::Integrator::ImplicitEuler,
            max_residual: 0.0,
        };
        let st = solve_potential(&eh, &a10, &g, &tg).unwrap();
        let pl = &st.layout;
        for n in 0..tg.steps {
            assert!(sparse::max_abs_diff(&st.alpha[n][pl.range(0)], &a0[n]) < 1e-9);
            assert!(sparse::max_abs_diff(&st.alpha[n][pl.range(1)], &a1[n]) < 1e-9);
        }
    }

    #[test]
    fn constant_shift_of_alpha0_leaves_clause_b_on_periodic() {
        // grad_int kills constants only without boundary conditions.
        let g = GridSpec::periodic([3, 3, 3], 1.0).unwrap();
        let ops = ComplexOps::build(&g).unwrap();
        let c = vec![2.5; ops.scalar0.dofs];
        assert!(sparse::max_abs(&ops.grad_int.apply(&c).unwrap()) == 0.0);
        let gb = ComplexOps::build(&grid()).unwrap();
        let cb = vec![2.5; gb.scalar0.dofs];
        assert!(sparse::max_abs(&gb.grad_int.apply(&cb).unwrap()) > 0.0);
    }

    #[test]
    fn gauge_identity_random_phi() {
        let g = grid();
        let prob = PotentialProblem::new(&g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tg = TimeGrid::new(0.1, 10, 0.0, 1.0).unwrap();
        let alpha: Vec<Vec<f64>> = (0..10).map(|_| rv(&mut rng, prob.layout.total())).collect();
        let phi: Vec<Vec<f64>> = (0..10).map(|_| rv(&mut rng, prob.ops.scalar0.dofs)).collect();
        let r = gauge_transform(&alpha, &phi, &g, &tg).unwrap();
        assert!(r.identity_residual <= 1e-10);
        let z: Vec<Vec<f64>> = vec![vec![0.0; prob.ops.scalar0.dofs]; 10];
        let r0 = gauge_transform(&alpha, &z, &g, &tg).unwrap();
        assert_eq!(r0.alpha, alpha);
        assert!(r0.rhs_shift.iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn gauge_with_wave_solution_has_no_shift_after_start() {
        // (∂0² - div grad_int) φ = δ-data at step 0 only.
        let g = grid();
        let ops = ComplexOps::build(&g).unwrap();
        let tau = 0.1;
        let steps = 12;
        let lap = ops.div.compose(&ops.grad_int).unwrap();
        let n = ops.scalar0.dofs;
        let step = SparseOp::identity(ops.scalar0.clone()).scale(1.0 / (tau * tau)).sub(&lap).unwrap();
        let lu = crate::linsolve::Factorization::new(&step).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let kick = rv(&mut rng, n);
        let mut phi: Vec<Vec<f64>> = Vec::new();
        for k in 0..steps {
            // ∂0² φ^k = (φ^k - 2 φ^{k-1} + φ^{k-2}) / tau²
            let p1 = if k >= 1 { phi[k - 1].clone() } else { vec![0.0; n] };
            let p2 = if k >= 2 { phi[k - 2].clone() } else { vec![0.0; n] };
            let mut b: Vec<f64> = p1.iter().zip(&p2).map(|(a, c)| (2.0 * a - c) / (tau * tau)).collect();
            if k == 0 {
                b.iter_mut().zip(&kick).for_each(|(x, y)| *x += y);
            }
            phi.push(lu.solve(&b).unwrap().0);
        }
        let tg = TimeGrid::new(tau, steps, 0.0, 1.0).unwrap();
        let alpha = vec![vec![0.0; Layout::extended(&ops).total()]; steps];
        let r = gauge_transform(&alpha, &phi, &g, &tg).unwrap();
        assert!(sparse::max_abs(&r.rhs_shift[0]) > 0.1);
        for s in &r.rhs_shift[1..] {
            assert!(sparse::max_abs(s) < 1e-10);
        }
    }

    #[test]
    fn compatibility_examples() {
        let g = grid();
        let ops = ComplexOps::build(&g).unwrap();
        let tg = TimeGrid::new(0.1, 6, 0.0, 1.0).unwrap();
        let z = vec![vec![0.0; ops.vector1.dofs]; 6];
        let r = compatibility_rhs(&z, &vec![0.0; ops.vector1.dofs], &g, &tg).unwrap();
        assert!(r.iter().flatten().all(|&x| x == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let e0 = rv(&mut rng, ops.vector1.dofs);
        let q = ops.div.apply(&e0).unwrap();
        let r = compatibility_rhs(&z, &e0, &g, &tg).unwrap();
        assert!(r.iter().all(|x| x == &q));
        // divergence-free current: curl of a face field
        let j: Vec<Vec<f64>> = (0..6).map(|_| ops.curl.apply(&rv(&mut rng, ops.vector2.dofs)).unwrap()).collect();
        let r = compatibility_rhs(&j, &e0, &g, &tg).unwrap();
        assert!(r.iter().all(|x| sparse::max_abs_diff(x, &q) < 1e-12));
    }

    #[test]
    fn range_check() {
        let ops = ComplexOps::build(&grid()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = ops.curl_int.apply(&rv(&mut rng, ops.vector1.dofs)).unwrap();
        assert!(curl_range_residual(&h, &ops).unwrap() <= 1e-10);
        let h = rv(&mut rng, ops.vector2.dofs);
        assert!(curl_range_residual(&h, &ops).unwrap() > 1e-3);
    }
}
