//! Causal time integration of `(∂0 M0 + M1 + A) U = F`.
//!
//! Samples live at `t_n = t0 + n tau`, `n = 0..N-1`, and the history before
//! `t0` is zero. A δ-impulse `v` at step `k` models the jump `U(t_k+) = M0^+ v`.

use std::io::{BufRead, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::block::BlockOp;
use crate::error::{Error, Result};
use crate::layout::Layout;
use crate::linsolve::{Factorization, SOLVE_TOL};
use crate::material::MaterialLaw;
use crate::pointwise::PointwiseMatrix;
use crate::sparse::{inner, norm, SparseOp};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub tau: f64,
    pub steps: usize,
    pub t0: f64,
    pub nu: f64,
}

impl TimeGrid {
    pub fn new(tau: f64, steps: usize, t0: f64, nu: f64) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::InvalidTimeGrid(format!("tau must be positive, got {tau}")));
        }
        if steps == 0 {
            return Err(Error::InvalidTimeGrid("at least one step is required".into()));
        }
        if !(nu.is_finite() && nu >= 0.0) {
            return Err(Error::InvalidTimeGrid(format!("nu must be nonnegative, got {nu}")));
        }
        if tau * nu >= 1.0 {
            return Err(Error::InvalidTimeGrid(format!("tau * nu = {} must be below 1", tau * nu)));
        }
        if !t0.is_finite() {
            return Err(Error::InvalidTimeGrid("t0 must be finite".into()));
        }
        Ok(Self { tau, steps, t0, nu })
    }

    pub fn time(&self, n: usize) -> f64 {
        self.t0 + n as f64 * self.tau
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.steps).map(|n| self.time(n)).collect()
    }

    /// Same interval, `factor` times more steps.
    pub fn refined(&self, factor: usize) -> Self {
        Self {
            tau: self.tau / factor as f64,
            steps: self.steps * factor,
            ..*self
        }
    }

    /// The effective discrete weight `(1 - e^{-2 nu tau}) / (2 tau)`.
    pub fn discrete_nu(&self) -> f64 {
        -(-2.0 * self.nu * self.tau).exp_m1() / (2.0 * self.tau)
    }
}

/// Time-sampled right-hand side with optional δ-impulses.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceTerm {
    pub dim: usize,
    pub regular: Vec<Vec<f64>>,
    pub impulses: Vec<(usize, Vec<f64>)>,
}

impl SourceTerm {
    pub fn zeros(dim: usize, steps: usize) -> Self {
        Self {
            dim,
            regular: vec![vec![0.0; dim]; steps],
            impulses: Vec::new(),
        }
    }

    pub fn from_fn(dim: usize, tg: &TimeGrid, mut f: impl FnMut(usize, f64) -> Vec<f64>) -> Self {
        Self {
            dim,
            regular: (0..tg.steps).map(|n| f(n, tg.time(n))).collect(),
            impulses: Vec::new(),
        }
    }

    /// Source whose effective samples are exactly `seq` (no impulses).
    pub fn from_samples(seq: Vec<Vec<f64>>) -> Self {
        let dim = seq.first().map_or(0, |v| v.len());
        Self {
            dim,
            regular: seq,
            impulses: Vec::new(),
        }
    }

    pub fn with_impulse(mut self, step: usize, v: Vec<f64>) -> Self {
        self.impulses.push((step, v));
        self
    }

    pub fn steps(&self) -> usize {
        self.regular.len()
    }

    pub fn validate(&self, tg: &TimeGrid, dim: usize) -> Result<()> {
        if self.dim != dim || self.regular.iter().any(|v| v.len() != dim) {
            return Err(Error::InvalidSource(format!("samples must have {dim} entries")));
        }
        if self.regular.len() != tg.steps {
            return Err(Error::InvalidSource(format!(
                "{} samples for {} steps",
                self.regular.len(),
                tg.steps
            )));
        }
        for (k, v) in &self.impulses {
            if *k >= tg.steps {
                return Err(Error::InvalidSource(format!("impulse at step {k} is off the time grid")));
            }
            if v.len() != dim {
                return Err(Error::InvalidSource(format!("impulse at step {k} has wrong length")));
            }
        }
        if self.regular.iter().flatten().chain(self.impulses.iter().flat_map(|i| &i.1)).any(|x| !x.is_finite()) {
            return Err(Error::InvalidSource("non-finite sample".into()));
        }
        Ok(())
    }

    /// Sum of the impulses at step `n`.
    pub fn impulse_at(&self, n: usize) -> Option<Vec<f64>> {
        let mut acc: Option<Vec<f64>> = None;
        for (k, v) in &self.impulses {
            if *k == n {
                match &mut acc {
                    None => acc = Some(v.clone()),
                    Some(a) => a.iter_mut().zip(v).for_each(|(x, y)| *x += y),
                }
            }
        }
        acc
    }

    /// `F^n + v^n / tau`: the discrete right-hand side seen by ∂0.
    pub fn effective(&self, tau: f64) -> Vec<Vec<f64>> {
        let mut out = self.regular.clone();
        for (k, v) in &self.impulses {
            out[*k].iter_mut().zip(v).for_each(|(x, y)| *x += y / tau);
        }
        out
    }

    /// First step at which the source is nonzero.
    pub fn support_start(&self) -> Option<usize> {
        let reg = self.regular.iter().position(|v| v.iter().any(|&x| x != 0.0));
        let imp = self
            .impulses
            .iter()
            .filter(|(_, v)| v.iter().any(|&x| x != 0.0))
            .map(|(k, _)| *k)
            .min();
        match (reg, imp) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    ImplicitEuler,
    CrankNicolson,
    Exponential,
}

impl std::fmt::Display for Integrator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Integrator::ImplicitEuler => "implicit_euler",
            Integrator::CrankNicolson => "crank_nicolson",
            Integrator::Exponential => "exponential",
        })
    }
}

/// State history on a time grid.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub tg: TimeGrid,
    pub layout: Layout,
    pub cell_volume: f64,
    pub samples: Vec<Vec<f64>>,
    pub solver: Integrator,
    /// Largest relative residual of any linear solve.
    pub max_residual: f64,
}

impl Trajectory {
    pub fn norms(&self) -> Vec<f64> {
        self.samples.iter().map(|u| norm(u, self.cell_volume)).collect()
    }

    /// `⟨U^n, M0 U^n⟩` per step.
    pub fn energies(&self, m0: &SparseOp) -> Result<Vec<f64>> {
        self.samples
            .iter()
            .map(|u| Ok(inner(u, &m0.apply(u)?, self.cell_volume)))
            .collect()
    }

    /// Norm of slot `s` per step.
    pub fn slot_norms(&self, s: usize) -> Vec<f64> {
        let r = self.layout.range(s);
        self.samples.iter().map(|u| norm(&u[r.clone()], self.cell_volume)).collect()
    }

    /// Samples restricted to slot `s`.
    pub fn slot(&self, s: usize) -> Vec<Vec<f64>> {
        let r = self.layout.range(s);
        self.samples.iter().map(|u| u[r.clone()].to_vec()).collect()
    }

    pub fn weighted_norm(&self, nu: f64) -> f64 {
        weighted_norm_seq(&self.samples, &self.tg, nu, self.cell_volume)
    }
}

/// `(tau * sum_n |u^n|^2 e^{-2 nu t_n})^{1/2}`.
pub fn weighted_norm_seq(seq: &[Vec<f64>], tg: &TimeGrid, nu: f64, cell_volume: f64) -> f64 {
    let s: f64 = seq
        .iter()
        .enumerate()
        .map(|(n, u)| inner(u, u, cell_volume) * (-2.0 * nu * tg.time(n)).exp())
        .sum();
    (tg.tau * s).sqrt()
}

/// Discrete evolutionary system with assembled sparse parts.
#[derive(Debug, Clone)]
pub struct EvoSystem {
    pub layout: Layout,
    pub cell_volume: f64,
    pub m0: SparseOp,
    pub m1: SparseOp,
    pub a: SparseOp,
    m0_pinv: SparseOp,
}

impl EvoSystem {
    pub fn new(law: &MaterialLaw, a: &BlockOp) -> Result<Self> {
        if !law.layout.same_spaces(a.layout()) {
            return Err(Error::LayoutMismatch {
                op: "EvoSystem::new",
                detail: "material law and operator have different layouts".into(),
            });
        }
        let asym = law.m0.asymmetry();
        if asym != 0.0 {
            return Err(Error::SelfAdjointnessViolated { asymmetry: asym });
        }
        Ok(Self {
            layout: law.layout.clone(),
            cell_volume: a.grid().cell_volume(),
            m0: law.m0.to_sparse(&law.layout)?,
            m1: law.m1.to_sparse(&law.layout)?,
            a: a.to_sparse(),
            m0_pinv: pseudo_inverse(&law.m0).to_sparse(&law.layout)?,
        })
    }

    /// `M0 = 1`, `M1 = 0`.
    pub fn unit(a: &BlockOp) -> Result<Self> {
        Self::new(&MaterialLaw::identity(a.layout()), a)
    }

    /// `M0 = 1`, `M1 = 0` around an already flattened spatial operator.
    pub fn unit_from_sparse(layout: &Layout, cell_volume: f64, a: SparseOp) -> Result<Self> {
        if a.nrows() != layout.total() || a.ncols() != layout.total() {
            return Err(Error::LayoutMismatch {
                op: "EvoSystem::unit_from_sparse",
                detail: format!("operator is {}x{}, layout has {}", a.nrows(), a.ncols(), layout.total()),
            });
        }
        let id = SparseOp::identity(a.rows().clone());
        Ok(Self {
            layout: layout.clone(),
            cell_volume,
            m0: id.clone(),
            m1: SparseOp::zero(a.rows().clone(), a.cols().clone()),
            a,
            m0_pinv: id,
        })
    }

    pub fn dim(&self) -> usize {
        self.layout.total()
    }

    /// Symmetric part of the step operator `M0/tau + M1` must be positive.
    fn check_step(&self, tau: f64) -> Result<()> {
        let s = self.m0.axpby(1.0 / tau, &self.m1.adjoint().add(&self.m1)?, 0.5)?;
        let mut min = f64::INFINITY;
        // Pointwise operators are block diagonal per point; a cheap sufficient
        // test is diagonal dominance, with a dense fallback for small systems.
        let mut dominant = true;
        for r in 0..s.nrows() {
            let mut d = 0.0;
            let mut off = 0.0;
            for (c, v) in s.row(r) {
                if c == r {
                    d = v;
                } else {
                    off += v.abs();
                }
            }
            min = min.min(d - off);
            if d - off <= 0.0 {
                dominant = false;
            }
        }
        if dominant {
            return Ok(());
        }
        if s.nrows() <= 4096 {
            let e = SymmetricEigen::new(s.to_dense()).eigenvalues.min();
            if e > 0.0 {
                return Ok(());
            }
            min = e;
        }
        Err(Error::SingularStep(format!(
            "M0/tau + sym(M1) is not positive definite (estimate {min:e})"
        )))
    }
}

/// Pointwise Moore-Penrose inverse of a symmetric field.
pub fn pseudo_inverse(m: &PointwiseMatrix) -> PointwiseMatrix {
    m.map_blocks(|b| {
        if b.nrows() == 1 {
            let v = b[(0, 0)];
            return DMatrix::from_element(1, 1, if v != 0.0 { 1.0 / v } else { 0.0 });
        }
        let e = SymmetricEigen::new((b + b.transpose()) * 0.5);
        let cut = 1e-14 * e.eigenvalues.amax();
        let d = e.eigenvalues.map(|x| if x.abs() > cut { 1.0 / x } else { 0.0 });
        &e.eigenvectors * DMatrix::from_diagonal(&d) * e.eigenvectors.transpose()
    })
}

/// Backward difference `(u^n - u^{n-1}) / tau` with `u^{-1} = 0`.
pub fn discrete_d0(seq: &[Vec<f64>], tau: f64) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(seq.len());
    for (n, u) in seq.iter().enumerate() {
        out.push(match n {
            0 => u.iter().map(|x| x / tau).collect(),
            _ => u.iter().zip(&seq[n - 1]).map(|(a, b)| (a - b) / tau).collect(),
        });
    }
    out
}

/// Causal running sum times `tau`, the inverse of [`discrete_d0`].
pub fn discrete_d0_inverse(seq: &[Vec<f64>], tau: f64) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(seq.len());
    for u in seq {
        let next = match out.last() {
            None => u.iter().map(|x| x * tau).collect(),
            Some(prev) => prev.iter().zip(u).map(|(p, x)| p + x * tau).collect(),
        };
        out.push(next);
    }
    out
}

/// Solve `(M0 ∂0 + M1 + A) U = G` for an effective right-hand side sequence.
pub fn implicit_euler_seq(sys: &EvoSystem, rhs: &[Vec<f64>], tau: f64) -> Result<(Vec<Vec<f64>>, f64)> {
    sys.check_step(tau)?;
    let step = sys.m0.scale(1.0 / tau).add(&sys.m1)?.add(&sys.a)?;
    let lu = Factorization::new(&step)?;
    let mut prev = vec![0.0; sys.dim()];
    let mut out = Vec::with_capacity(rhs.len());
    let mut worst: f64 = 0.0;
    for (n, g) in rhs.iter().enumerate() {
        let hist = sys.m0.apply(&prev)?;
        let b: Vec<f64> = g.iter().zip(&hist).map(|(x, h)| x + h / tau).collect();
        let (u, r) = lu.solve(&b)?;
        if r > SOLVE_TOL {
            return Err(Error::SolverBreakdown { step: n, residual: r });
        }
        worst = worst.max(r);
        prev = u.clone();
        out.push(u);
    }
    Ok((out, worst))
}

pub fn solve_implicit_euler_system(sys: &EvoSystem, f: &SourceTerm, tg: &TimeGrid) -> Result<Trajectory> {
    f.validate(tg, sys.dim())?;
    let (samples, worst) = implicit_euler_seq(sys, &f.effective(tg.tau), tg.tau)?;
    Ok(Trajectory {
        tg: *tg,
        layout: sys.layout.clone(),
        cell_volume: sys.cell_volume,
        samples,
        solver: Integrator::ImplicitEuler,
        max_residual: worst,
    })
}

pub fn solve_implicit_euler(law: &MaterialLaw, a: &BlockOp, f: &SourceTerm, tg: &TimeGrid) -> Result<Trajectory> {
    solve_implicit_euler_system(&EvoSystem::new(law, a)?, f, tg)
}

pub fn solve_crank_nicolson_system(sys: &EvoSystem, f: &SourceTerm, tg: &TimeGrid) -> Result<Trajectory> {
    f.validate(tg, sys.dim())?;
    let tau = tg.tau;
    sys.check_step(2.0 * tau)?;
    let b = sys.m1.add(&sys.a)?;
    let lhs = sys.m0.axpby(1.0 / tau, &b, 0.5)?;
    let rhs_op = sys.m0.axpby(1.0 / tau, &b, -0.5)?;
    let lu = Factorization::new(&lhs)?;
    let mut prev = vec![0.0; sys.dim()];
    let mut prev_f = vec![0.0; sys.dim()];
    let mut samples = Vec::with_capacity(tg.steps);
    let mut worst: f64 = 0.0;
    for n in 0..tg.steps {
        let fn_ = &f.regular[n];
        let mut rhs = rhs_op.apply(&prev)?;
        for ((r, a), c) in rhs.iter_mut().zip(fn_).zip(&prev_f) {
            *r += 0.5 * (a + c);
        }
        let (mut u, res) = lu.solve(&rhs)?;
        if res > SOLVE_TOL {
            return Err(Error::SolverBreakdown { step: n, residual: res });
        }
        worst = worst.max(res);
        if let Some(v) = f.impulse_at(n) {
            let jump = sys.m0_pinv.apply(&v)?;
            u.iter_mut().zip(&jump).for_each(|(x, j)| *x += j);
        }
        prev_f = fn_.clone();
        prev = u.clone();
        samples.push(u);
    }
    Ok(Trajectory {
        tg: *tg,
        layout: sys.layout.clone(),
        cell_volume: sys.cell_volume,
        samples,
        solver: Integrator::CrankNicolson,
        max_residual: worst,
    })
}

pub fn solve_crank_nicolson(law: &MaterialLaw, a: &BlockOp, f: &SourceTerm, tg: &TimeGrid) -> Result<Trajectory> {
    solve_crank_nicolson_system(&EvoSystem::new(law, a)?, f, tg)
}

/// Largest system the dense propagator accepts.
pub const EXPONENTIAL_LIMIT: usize = 4096;

/// `(∂0 + Aw) V = F` via the exact propagator `exp(-tau Aw)`, trapezoidal
/// quadrature of the source and exact impulse injection.
pub fn solve_exponential(aw: &BlockOp, f: &SourceTerm, tg: &TimeGrid) -> Result<Trajectory> {
    let dim = aw.dim();
    if dim > EXPONENTIAL_LIMIT {
        return Err(Error::TooLarge {
            dim,
            limit: EXPONENTIAL_LIMIT,
        });
    }
    f.validate(tg, dim)?;
    let m = aw.to_dense();
    let prop = (&m * (-tg.tau)).exp();
    let mut prev = DVector::zeros(dim);
    let mut prev_f = DVector::zeros(dim);
    let mut samples = Vec::with_capacity(tg.steps);
    for n in 0..tg.steps {
        let fn_ = DVector::from_column_slice(&f.regular[n]);
        let mut u = &prop * (&prev + &prev_f * (0.5 * tg.tau)) + &fn_ * (0.5 * tg.tau);
        if let Some(v) = f.impulse_at(n) {
            u += DVector::from_vec(v);
        }
        samples.push(u.as_slice().to_vec());
        prev = u;
        prev_f = fn_;
    }
    Ok(Trajectory {
        tg: *tg,
        layout: aw.layout().clone(),
        cell_volume: aw.grid().cell_volume(),
        samples,
        solver: Integrator::Exponential,
        max_residual: 0.0,
    })
}

/// Dispatch on the integrator; the exponential variant needs `M0 = 1`, `M1 = 0`.
pub fn solve_with(which: Integrator, law: &MaterialLaw, a: &BlockOp, f: &SourceTerm, tg: &TimeGrid) -> Result<Trajectory> {
    match which {
        Integrator::ImplicitEuler => solve_implicit_euler(law, a, f, tg),
        Integrator::CrankNicolson => solve_crank_nicolson(law, a, f, tg),
        Integrator::Exponential => {
            let unit = law.m1_is_zero() && law.m0 == PointwiseMatrix::identity(&law.layout);
            if !unit {
                return Err(Error::InvalidMaterial(
                    "the exponential propagator needs M0 = 1 and M1 = 0; conjugate by sqrt(M0) first".into(),
                ));
            }
            solve_exponential(a, f, tg)
        }
    }
}

/// Outcome of the a priori bound check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub solution_norm: f64,
    pub source_norm: f64,
    pub c0: f64,
    /// Slack constant `kappa` in `(1 + kappa tau)`.
    pub kappa: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Check `|U|_nu <= (1 + kappa tau) |F|_nu / c0` for an implicit-Euler
/// trajectory, with `F` the effective discrete source.
///
/// The implicit scheme is coercive with the discrete weight
/// `nu_d = (1 - e^{-2 nu tau}) / (2 tau) <= nu`; lowering the weight from `nu`
/// to `nu_d` costs at most `(nu - nu_d) |M0|` in the certificate, which gives
/// `kappa = (nu - nu_d) |M0| / (tau (c0 - (nu - nu_d) |M0|))`.
pub fn solution_bound_check(traj: &Trajectory, f: &SourceTerm, c0: f64, m0_norm: f64) -> BoundCheck {
    let tg = traj.tg;
    let nu = tg.nu;
    let g = f.effective(tg.tau);
    let u_norm = traj.weighted_norm(nu);
    let f_norm = weighted_norm_seq(&g, &tg, nu, traj.cell_volume);
    let loss = (nu - tg.discrete_nu()) * m0_norm;
    let (kappa, bound) = if c0 > loss {
        let kappa = loss / (tg.tau * (c0 - loss));
        (kappa, (1.0 + kappa * tg.tau) * f_norm / c0)
    } else {
        (f64::INFINITY, f64::INFINITY)
    };
    BoundCheck {
        solution_norm: u_norm,
        source_norm: f_norm,
        c0,
        kappa,
        bound,
        holds: u_norm <= bound,
    }
}

/// Verify that every state before `start` is exactly zero.
pub fn causality_check(traj: &Trajectory, start: usize) -> Result<()> {
    for (n, u) in traj.samples.iter().enumerate().take(start) {
        if u.iter().any(|&x| x != 0.0) {
            return Err(Error::CausalityViolated {
                step: n,
                start,
                norm: norm(u, traj.cell_volume),
            });
        }
    }
    Ok(())
}

/// Magic token opening a raw field dump.
pub const FIELD_DUMP_MAGIC: &str = "EVOF1";

/// Write `EVOF1 <ncomponents> <dofs> <nsteps> little-endian f64` followed
/// by the samples back to back.
pub fn write_field_dump(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    let ncomp = traj.layout.scalar_component_count();
    writeln!(
        w,
        "{FIELD_DUMP_MAGIC} {ncomp} {} {} little-endian f64",
        traj.layout.total(),
        traj.samples.len()
    )?;
    for u in &traj.samples {
        for x in u {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a dump written by [`write_field_dump`]; returns `(ncomponents, samples)`.
pub fn read_field_dump(path: &Path) -> Result<(usize, Vec<Vec<f64>>)> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut header = String::new();
    r.read_line(&mut header)?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 6 || parts[0] != FIELD_DUMP_MAGIC || parts[4] != "little-endian" || parts[5] != "f64" {
        return Err(Error::Io(format!("bad field dump header: {header:?}")));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|e| Error::Io(format!("bad header field {s:?}: {e}")));
    let (ncomp, dofs, steps) = (num(parts[1])?, num(parts[2])?, num(parts[3])?);
    let mut buf = vec![0u8; dofs * steps * 8];
    r.read_exact(&mut buf)?;
    let vals: Vec<f64> = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((ncomp, vals.chunks(dofs.max(1)).map(|c| c.to_vec()).take(steps).collect()))
}

/// CSV of per-step diagnostics: `t`, `norm`, `weighted_norm` (cumulative),
/// one `norm_<slot>` column per slot, then any extra named columns.
pub fn write_diagnostics_csv(path: &Path, traj: &Trajectory, extra: &[(&str, Vec<f64>)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.to_string()))?;
    let mut header = vec!["t".to_string(), "norm".into(), "weighted_norm".into()];
    header.extend(traj.layout.names().iter().map(|n| format!("norm_{n}")));
    header.extend(extra.iter().map(|(n, _)| n.to_string()));
    w.write_record(&header).map_err(|e| Error::Io(e.to_string()))?;
    let norms = traj.norms();
    let slots: Vec<Vec<f64>> = (0..traj.layout.len()).map(|s| traj.slot_norms(s)).collect();
    let mut acc = 0.0;
    for n in 0..traj.samples.len() {
        acc += traj.tg.tau * norms[n] * norms[n] * (-2.0 * traj.tg.nu * traj.tg.time(n)).exp();
        let mut row = vec![fmt(traj.tg.time(n)), fmt(norms[n]), fmt(acc.sqrt())];
        row.extend(slots.iter().map(|s| fmt(s[n])));
        row.extend(extra.iter().map(|(_, v)| v.get(n).map_or(String::new(), |x| fmt(*x))));
        w.write_record(&row).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn fmt(x: f64) -> String {
    format!("{x:.17e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block::{assemble_block, BlockTag};
    use crate::discrete::ComplexOps;
    use crate::grid::{EntitySpace, GridSpec};

    fn scalar_setup(m0: f64, m1: f64) -> (MaterialLaw, BlockOp) {
        let g = GridSpec::periodic([2, 2, 2], 1.0).unwrap();
        let l = Layout::new(vec![EntitySpace::collocated(8, 1)], vec!["u".into()]);
        let law = MaterialLaw::new(
            l.clone(),
            PointwiseMatrix::scalar(&l, m0),
            PointwiseMatrix::scalar(&l, m1),
        )
        .unwrap();
        (law, BlockOp::zero(g, l, BlockTag::Custom))
    }

    #[test]
    fn time_grid_validation() {
        assert!(TimeGrid::new(0.1, 10, 0.0, 1.0).is_ok());
        assert!(TimeGrid::new(0.1, 10, 0.0, 10.0).is_err());
        assert!(TimeGrid::new(0.0, 10, 0.0, 1.0).is_err());
        assert!(TimeGrid::new(0.1, 0, 0.0, 1.0).is_err());
        let tg = TimeGrid::new(0.1, 10, -1.0, 1.0).unwrap();
        assert!((tg.time(10) - 0.0).abs() < 1e-15);
        assert!(tg.discrete_nu() < 1.0 && tg.discrete_nu() > 0.9);
    }

    #[test]
    fn d0_examples() {
        let c = vec![vec![3.0]; 4];
        let d = discrete_d0(&c, 0.5);
        assert_eq!(d, vec![vec![6.0], vec![0.0], vec![0.0], vec![0.0]]);
        let mut imp = vec![vec![0.0]; 5];
        imp[2] = vec![1.0 / 0.25];
        assert_eq!(discrete_d0_inverse(&imp, 0.25), vec![vec![0.0], vec![0.0], vec![1.0], vec![1.0], vec![1.0]]);
        let f: Vec<Vec<f64>> = (0..6).map(|i| vec![(i as f64 * 1.3).sin(), i as f64]).collect();
        let rt = discrete_d0(&discrete_d0_inverse(&f, 0.125), 0.125);
        for (a, b) in rt.iter().zip(&f) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_data_zero_solution() {
        let (law, a) = scalar_setup(1.0, 0.0);
        let tg = TimeGrid::new(0.1, 5, 0.0, 1.0).unwrap();
        let t = solve_implicit_euler(&law, &a, &SourceTerm::zeros(8, 5), &tg).unwrap();
        assert!(t.samples.iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn impulse_persists_without_dynamics() {
        let (law, a) = scalar_setup(1.0, 0.0);
        let tg = TimeGrid::new(0.1, 6, 0.0, 1.0).unwrap();
        let u0: Vec<f64> = (0..8).map(|i| i as f64 - 3.5).collect();
        let f = SourceTerm::zeros(8, 6).with_impulse(0, u0.clone());
        for which in [Integrator::ImplicitEuler, Integrator::CrankNicolson, Integrator::Exponential] {
            let t = solve_with(which, &law, &a, &f, &tg).unwrap();
            for u in &t.samples {
                for (x, y) in u.iter().zip(&u0) {
                    assert!((x - y).abs() < 1e-12, "{which}");
                }
            }
        }
    }

    #[test]
    fn relaxation_fixed_point() {
        // U^n = (f tau + U^{n-1}) / (1 + c tau) converges to f / c.
        let (law, a) = scalar_setup(1.0, 2.0);
        let tg = TimeGrid::new(0.1, 200, 0.0, 1.0).unwrap();
        let f = SourceTerm::from_fn(8, &tg, |_, _| vec![3.0; 8]);
        let t = solve_implicit_euler(&law, &a, &f, &tg).unwrap();
        let mut u = 0.0;
        for n in 0..200 {
            u = (3.0 * 0.1 + u) / (1.0 + 2.0 * 0.1);
            assert!((t.samples[n][0] - u).abs() < 1e-12);
        }
        assert!((u - 1.5).abs() < 1e-10);
    }

    #[test]
    fn exponential_without_operator_integrates() {
        let (_, a) = scalar_setup(1.0, 0.0);
        let tg = TimeGrid::new(0.25, 4, 0.0, 0.0).unwrap();
        let f = SourceTerm::from_fn(8, &tg, |_, t| vec![t; 8]);
        let tr = solve_exponential(&a, &f, &tg).unwrap();
        // trapezoidal cumulative integral of t from t0 = 0 (F before t0 is zero)
        let want = [0.0, 0.03125, 0.125, 0.28125];
        for (u, w) in tr.samples.iter().zip(want) {
            assert!((u[3] - w).abs() < 1e-15);
        }
    }

    #[test]
    fn weighted_norm_constant() {
        let tg = TimeGrid::new(0.5, 8, 0.0, 0.0).unwrap();
        let seq = vec![vec![3.0, 4.0]; 8];
        assert!((weighted_norm_seq(&seq, &tg, 0.0, 1.0) - 5.0 * 4f64.sqrt()).abs() < 1e-14);
        assert_eq!(weighted_norm_seq(&vec![vec![0.0; 2]; 8], &tg, 0.0, 1.0), 0.0);
    }

    #[test]
    fn crank_nicolson_is_isometric() {
        let g = GridSpec::periodic([3, 3, 3], 1.0).unwrap();
        let ops = ComplexOps::build(&g).unwrap();
        let a = assemble_block(BlockTag::Extended, &ops).unwrap();
        let law = MaterialLaw::identity(a.layout());
        let tg = TimeGrid::new(0.05, 50, 0.0, 1.0).unwrap();
        let u0: Vec<f64> = (0..a.dim()).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        let f = SourceTerm::zeros(a.dim(), 50).with_impulse(0, u0);
        let t = solve_crank_nicolson(&law, &a, &f, &tg).unwrap();
        let n = t.norms();
        for x in &n {
            assert!((x * x - n[0] * n[0]).abs() <= 1e-12 * n[0] * n[0]);
        }
    }

    #[test]
    fn causality_and_dump_roundtrip() {
        let g = GridSpec::periodic([2, 2, 2], 1.0).unwrap();
        let ops = ComplexOps::build(&g).unwrap();
        let a = assemble_block(BlockTag::Extended, &ops).unwrap();
        let law = MaterialLaw::identity(a.layout());
        let tg = TimeGrid::new(0.1, 8, 0.0, 1.0).unwrap();
        let f = SourceTerm::from_fn(a.dim(), &tg, |n, _| vec![if n >= 5 { 1.0 } else { 0.0 }; 64]);
        let t = solve_implicit_euler(&law, &a, &f, &tg).unwrap();
        causality_check(&t, 5).unwrap();
        assert!(matches!(causality_check(&t, 6), Err(Error::CausalityViolated { step: 5, .. })));

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("u.bin");
        write_field_dump(&p, &t).unwrap();
        let head = std::fs::read(&p).unwrap();
        assert!(head.starts_with(b"EVOF1 8 64 8 little-endian f64\n"));
        let (nc, back) = read_field_dump(&p).unwrap();
        assert_eq!(nc, 8);
        assert_eq!(back, t.samples);
        let c = dir.path().join("d.csv");
        write_diagnostics_csv(&c, &t, &[("extra", vec![1.0; 8])]).unwrap();
        let text = std::fs::read_to_string(&c).unwrap();
        assert!(text.starts_with("t,norm,weighted_norm,norm_V0,norm_V1,norm_V2,norm_V3,extra\n"));
        assert_eq!(text.lines().count(), 9);
    }
}
