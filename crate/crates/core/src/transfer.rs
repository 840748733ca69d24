//! Maxwell, extended Maxwell and GEM systems, and the transfers between
//! them realised by discrete causal resolvents.
//!
//! All transfers work in the canonical form `(∂0 + B) V = F` with `M0 = 1`.
//! `∂0` is the backward difference of the implicit Euler scheme, so every
//! resolvent below is an implicit Euler solve.

use serde::{Deserialize, Serialize};

use crate::block::{assemble_block, conjugate_weighted, BlockOp, BlockTag, WeightSide};
use crate::discrete::ComplexOps;
use crate::error::{Error, Result};
use crate::evo::{
    discrete_d0, discrete_d0_inverse, implicit_euler_seq, solve_with, EvoSystem, Integrator, SourceTerm, TimeGrid,
    Trajectory,
};
use crate::grid::GridSpec;
use crate::layout::Layout;
use crate::material::MaterialLaw;
use crate::pointwise::{PointwiseMatrix, PointwiseWeight};
use crate::sparse::{self, SparseOp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    Maxwell,
    Extended,
    Gem,
}

/// A concrete system `(∂0 M0 + M1 + A) U = F`.
#[derive(Debug, Clone)]
pub struct SystemInstance {
    pub kind: SystemKind,
    pub grid: GridSpec,
    pub layout: Layout,
    pub law: MaterialLaw,
    pub a: BlockOp,
}

impl SystemInstance {
    pub fn solve(&self, which: Integrator, f: &SourceTerm, tg: &TimeGrid) -> Result<Trajectory> {
        solve_with(which, &self.law, &self.a, f, tg)
    }
}

/// `[[0, -curl], [curl_int, 0]]` on `(E, H)`.
pub fn maxwell_operator(ops: &ComplexOps) -> Result<BlockOp> {
    let mut a = BlockOp::zero(ops.grid, Layout::maxwell(ops), BlockTag::AMax);
    a.set(0, 1, ops.curl.neg())?;
    a.set(1, 0, ops.curl_int.clone())?;
    Ok(a)
}

pub fn maxwell_system(law: &MaterialLaw, grid: &GridSpec) -> Result<SystemInstance> {
    let ops = ComplexOps::build(grid)?;
    let a = maxwell_operator(&ops)?;
    if !law.layout.same_spaces(a.layout()) {
        return Err(Error::LayoutMismatch {
            op: "maxwell_system",
            detail: "law must live on the (E, H) layout".into(),
        });
    }
    Ok(SystemInstance {
        kind: SystemKind::Maxwell,
        grid: *grid,
        layout: a.layout().clone(),
        law: law.clone(),
        a,
    })
}

/// Implicit Euler solve of Maxwell's equations with data `(-J, K)`.
pub fn solve_maxwell(law: &MaterialLaw, grid: &GridSpec, f: &SourceTerm, tg: &TimeGrid) -> Result<Trajectory> {
    maxwell_system(law, grid)?.solve(Integrator::ImplicitEuler, f, tg)
}

/// `sqrt(E)^-1 A_Max sqrt(E)^-1 + sqrt(E) A_ac sqrt(E)` on the extended layout.
pub fn extended_system(weight: &PointwiseWeight, grid: &GridSpec) -> Result<SystemInstance> {
    let ops = ComplexOps::build(grid)?;
    let max = assemble_block(BlockTag::AMax, &ops)?;
    let ac = assemble_block(BlockTag::Aac, &ops)?;
    let a = conjugate_weighted(&[(&max, WeightSide::Inverse), (&ac, WeightSide::Direct)], weight)?
        .with_tag(BlockTag::Extended);
    Ok(SystemInstance {
        kind: SystemKind::Extended,
        grid: *grid,
        layout: a.layout().clone(),
        law: MaterialLaw::identity(a.layout()),
        a,
    })
}

pub fn solve_extended(weight: &PointwiseWeight, grid: &GridSpec, f: &SourceTerm, tg: &TimeGrid) -> Result<Trajectory> {
    extended_system(weight, grid)?.solve(Integrator::ImplicitEuler, f, tg)
}

/// Restrict an extended-layout operator to the `(C, E, H)` slots.
fn restrict_to_gem(a: &BlockOp, ops: &ComplexOps) -> Result<BlockOp> {
    let mut out = BlockOp::zero(ops.grid, Layout::gem(ops), BlockTag::Gem);
    for (&(i, j), b) in a.blocks() {
        if i < 3 && j < 3 {
            out.set(i, j, b.clone())?;
        }
    }
    Ok(out)
}

/// GEM operator `sqrt(C)^-1 A_Max sqrt(C)^-1 + sqrt(C) A_Dac sqrt(C)` on `(C, E, H)`.
pub fn gem_system(c_weight: &PointwiseWeight, grid: &GridSpec) -> Result<SystemInstance> {
    let ops = ComplexOps::build(grid)?;
    let max = restrict_to_gem(&assemble_block(BlockTag::AMax, &ops)?, &ops)?;
    let dac = restrict_to_gem(&assemble_block(BlockTag::ADac, &ops)?, &ops)?;
    let a = conjugate_weighted(&[(&max, WeightSide::Inverse), (&dac, WeightSide::Direct)], c_weight)?
        .with_tag(BlockTag::Gem);
    Ok(SystemInstance {
        kind: SystemKind::Gem,
        grid: *grid,
        layout: a.layout().clone(),
        law: MaterialLaw::identity(a.layout()),
        a,
    })
}

pub fn solve_gem(c_weight: &PointwiseWeight, grid: &GridSpec, f: &SourceTerm, tg: &TimeGrid) -> Result<Trajectory> {
    gem_system(c_weight, grid)?.solve(Integrator::ImplicitEuler, f, tg)
}

/// `blockdiag(C, 1)` on the extended layout.
pub fn gem_embedding_weight(c_weight: &PointwiseWeight, ext: &Layout) -> Result<PointwiseWeight> {
    let m = match c_weight.matrix() {
        PointwiseMatrix::Diagonal { values } => {
            let mut v = values.clone();
            v.extend(std::iter::repeat_n(1.0, ext.slot(3).dofs));
            PointwiseMatrix::Diagonal { values: v }
        }
        PointwiseMatrix::Dense { npoints, blocks, .. } => {
            let blocks = blocks
                .iter()
                .map(|b| {
                    let mut m = nalgebra::DMatrix::zeros(8, 8);
                    m.view_mut((0, 0), (7, 7)).copy_from(b);
                    m[(7, 7)] = 1.0;
                    m
                })
                .collect();
            PointwiseMatrix::Dense {
                npoints: *npoints,
                comps: ext.components(),
                blocks,
            }
        }
    };
    m.check_layout(ext)?;
    PointwiseWeight::new(m)
}

/// Max deviation between the GEM solution and the first three slots of the
/// extended solve with `A_Nac` dropped, weight `blockdiag(C, 1)` and data
/// `(F, 0)`; also returns the largest entry of the last slot.
pub fn gem_embedding_residual(
    c_weight: &PointwiseWeight,
    grid: &GridSpec,
    f: &SourceTerm,
    tg: &TimeGrid,
) -> Result<(f64, f64)> {
    let gem = solve_gem(c_weight, grid, f, tg)?;
    let ops = ComplexOps::build(grid)?;
    let ext = Layout::extended(&ops);
    let w = gem_embedding_weight(c_weight, &ext)?;
    let max = assemble_block(BlockTag::AMax, &ops)?;
    let dac = assemble_block(BlockTag::ADac, &ops)?;
    let a = conjugate_weighted(&[(&max, WeightSide::Inverse), (&dac, WeightSide::Direct)], &w)?;
    let pad = ext.slot(3).dofs;
    let lift = |v: &Vec<f64>| {
        let mut out = v.clone();
        out.extend(std::iter::repeat_n(0.0, pad));
        out
    };
    let fe = SourceTerm {
        dim: ext.total(),
        regular: f.regular.iter().map(lift).collect(),
        impulses: f.impulses.iter().map(|(k, v)| (*k, lift(v))).collect(),
    };
    let full = solve_with(Integrator::ImplicitEuler, &MaterialLaw::identity(&ext), &a, &fe, tg)?;
    let n = gem.layout.total();
    let mut dev: f64 = 0.0;
    let mut last: f64 = 0.0;
    for (g, e) in gem.samples.iter().zip(&full.samples) {
        dev = dev.max(sparse::max_abs_diff(g, &e[..n]));
        last = last.max(sparse::max_abs(&e[n..]));
    }
    Ok((dev, last))
}

/// Pair `(rest, factor)` with `rest * factor = factor * rest = 0`, so that
/// `(∂0 + rest)(∂0 + factor) = ∂0 (∂0 + rest + factor)`.
#[derive(Debug, Clone)]
pub struct TransferPair {
    pub rest: SparseOp,
    pub factor: SparseOp,
    pub layout: Layout,
    pub cell_volume: f64,
    /// `max(|rest factor|, |factor rest|)`.
    pub annihilation: f64,
}

/// Absolute bound on the annihilation defect accepted for a transfer pair.
pub const ANNIHILATION_TOL: f64 = 1e-10;

impl TransferPair {
    fn new(rest: &BlockOp, factor: &BlockOp) -> Result<Self> {
        let (r, f) = (rest.to_sparse(), factor.to_sparse());
        let annihilation = r.compose(&f)?.max_abs().max(f.compose(&r)?.max_abs());
        if annihilation > ANNIHILATION_TOL {
            return Err(Error::InvalidMaterial(format!(
                "weighted parts do not annihilate (defect {annihilation:e})"
            )));
        }
        Ok(Self {
            rest: r,
            factor: f,
            layout: rest.layout().clone(),
            cell_volume: rest.grid().cell_volume(),
            annihilation,
        })
    }

    /// Extended Maxwell: `rest = sqrt(E)^-1 A_Max sqrt(E)^-1`, `factor = sqrt(E) A_ac sqrt(E)`.
    pub fn extended_maxwell(weight: &PointwiseWeight, grid: &GridSpec) -> Result<Self> {
        let ops = ComplexOps::build(grid)?;
        let max = assemble_block(BlockTag::AMax, &ops)?;
        let ac = assemble_block(BlockTag::Aac, &ops)?;
        Self::new(
            &conjugate_weighted(&[(&max, WeightSide::Inverse)], weight)?,
            &conjugate_weighted(&[(&ac, WeightSide::Direct)], weight)?,
        )
    }

    /// GEM: `rest = sqrt(E)^-1 A_Max sqrt(E)^-1 + sqrt(E) A_Dac sqrt(E)`, `factor = sqrt(E) A_Nac sqrt(E)`.
    pub fn gem(weight: &PointwiseWeight, grid: &GridSpec) -> Result<Self> {
        let ops = ComplexOps::build(grid)?;
        let max = assemble_block(BlockTag::AMax, &ops)?;
        let dac = assemble_block(BlockTag::ADac, &ops)?;
        let nac = assemble_block(BlockTag::ANac, &ops)?;
        let rest = conjugate_weighted(&[(&max, WeightSide::Inverse), (&dac, WeightSide::Direct)], weight)?;
        let factor = conjugate_weighted(&[(&nac, WeightSide::Direct)], weight)?;
        Self::new(&rest, &factor)
    }

    fn system(&self, op: SparseOp) -> Result<EvoSystem> {
        EvoSystem::unit_from_sparse(&self.layout, self.cell_volume, op)
    }

    /// `(∂0 + B)^-1 g` for `B` one of the parts or their sum.
    pub fn resolvent(&self, which: Part, g: &[Vec<f64>], tau: f64) -> Result<Vec<Vec<f64>>> {
        let op = self.part(which)?;
        Ok(implicit_euler_seq(&self.system(op)?, g, tau)?.0)
    }

    /// `(∂0 + B) u`, applied forward.
    pub fn forward(&self, which: Part, u: &[Vec<f64>], tau: f64) -> Result<Vec<Vec<f64>>> {
        let op = self.part(which)?;
        let mut out = discrete_d0(u, tau);
        for (o, x) in out.iter_mut().zip(u) {
            let bx = op.apply(x)?;
            o.iter_mut().zip(&bx).for_each(|(a, b)| *a += b);
        }
        Ok(out)
    }

    fn part(&self, which: Part) -> Result<SparseOp> {
        Ok(match which {
            Part::Rest => self.rest.clone(),
            Part::Factor => self.factor.clone(),
            Part::Full => self.rest.add(&self.factor)?,
        })
    }

    /// `F = ∂0 (∂0 + factor)^-1 F̃`.
    pub fn to_reduced_rhs(&self, f_full: &SourceTerm, tg: &TimeGrid) -> Result<SourceTerm> {
        f_full.validate(tg, self.layout.total())?;
        let w = self.resolvent(Part::Factor, &f_full.effective(tg.tau), tg.tau)?;
        Ok(SourceTerm::from_samples(discrete_d0(&w, tg.tau)))
    }

    /// `F̃ = (1 + ∂0^-1 factor) F`.
    pub fn to_full_rhs(&self, f: &SourceTerm, tg: &TimeGrid) -> Result<SourceTerm> {
        f.validate(tg, self.layout.total())?;
        let g = f.effective(tg.tau);
        let bg: Vec<Vec<f64>> = g.iter().map(|x| self.factor.apply(x)).collect::<Result<_>>()?;
        let acc = discrete_d0_inverse(&bg, tg.tau);
        let out = g
            .iter()
            .zip(&acc)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
            .collect();
        Ok(SourceTerm::from_samples(out))
    }

    /// Relative residual of `(∂0 + B) v = g` over the whole time grid.
    pub fn residual(&self, which: Part, v: &[Vec<f64>], g: &[Vec<f64>], tau: f64) -> Result<f64> {
        let lhs = self.forward(which, v, tau)?;
        Ok(seq_rel_diff(&lhs, g))
    }

    /// Run both directions of the transfer for data `F̃` and report residuals.
    pub fn check(&self, f_full: &SourceTerm, tg: &TimeGrid) -> Result<TransferReport> {
        let tau = tg.tau;
        let g_full = f_full.effective(tau);
        let v = self.resolvent(Part::Full, &g_full, tau)?;
        let f_red = self.to_reduced_rhs(f_full, tg)?;
        let full_to_reduced = self.residual(Part::Rest, &v, &f_red.regular, tau)?;

        let w = self.resolvent(Part::Rest, &g_full, tau)?;
        let back = self.to_full_rhs(f_full, tg)?;
        let reduced_to_full = self.residual(Part::Full, &w, &back.regular, tau)?;

        let trip = self.to_reduced_rhs(&back, tg)?;
        let round_trip = seq_rel_diff(&trip.regular, &g_full);
        Ok(TransferReport {
            full_to_reduced,
            reduced_to_full,
            round_trip,
            annihilation: self.annihilation,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Rest,
    Factor,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransferReport {
    /// Residual of the reduced equation for the full solution and transferred data.
    pub full_to_reduced: f64,
    /// Residual of the full equation for the reduced solution and transferred data.
    pub reduced_to_full: f64,
    /// `|to_reduced(to_full(F)) - F| / |F|`.
    pub round_trip: f64,
    pub annihilation: f64,
}

impl TransferReport {
    pub fn max(&self) -> f64 {
        self.full_to_reduced.max(self.reduced_to_full)
    }
}

fn seq_rel_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in a.iter().zip(b) {
        for (p, q) in x.iter().zip(y) {
            num += (p - q) * (p - q);
            den += q * q;
        }
    }
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

pub fn extended_to_maxwell_rhs(
    f_ext: &SourceTerm,
    weight: &PointwiseWeight,
    grid: &GridSpec,
    tg: &TimeGrid,
) -> Result<SourceTerm> {
    TransferPair::extended_maxwell(weight, grid)?.to_reduced_rhs(f_ext, tg)
}

pub fn maxwell_to_extended_rhs(
    f: &SourceTerm,
    weight: &PointwiseWeight,
    grid: &GridSpec,
    tg: &TimeGrid,
) -> Result<SourceTerm> {
    TransferPair::extended_maxwell(weight, grid)?.to_full_rhs(f, tg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GemDirection {
    /// `F ↦ (1 + ∂0^-1 sqrt(E) A_Nac sqrt(E)) F`.
    ToExtended,
    /// `F̃ ↦ ∂0 (∂0 + sqrt(E) A_Nac sqrt(E))^-1 F̃`.
    ToGem,
}

pub fn gem_transfer(
    f: &SourceTerm,
    weight: &PointwiseWeight,
    grid: &GridSpec,
    tg: &TimeGrid,
    direction: GemDirection,
) -> Result<SourceTerm> {
    let pair = TransferPair::gem(weight, grid)?;
    match direction {
        GemDirection::ToExtended => pair.to_full_rhs(f, tg),
        GemDirection::ToGem => pair.to_reduced_rhs(f, tg),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockReductionReport {
    /// `max_n max(|V0^n|, |V3^n|)`.
    pub scalar_max: f64,
    /// Relative deviation of `(V1, V2)` from the Maxwell solve.
    pub maxwell_deviation: f64,
    pub passed: bool,
    pub failures: Vec<String>,
}

pub const SCALAR_SLOT_TOL: f64 = 1e-12;
pub const REDUCTION_TOL: f64 = 1e-10;

/// Solve `(∂0 + sqrt(E)^-1 A_Max sqrt(E)^-1) V = F` with `F = (0, F1, F2, 0)`
/// and compare with the Maxwell solve for `M0 = [[E11, E12], [E21, E22]]`.
pub fn block_reduction_check(
    f: &SourceTerm,
    weight: &PointwiseWeight,
    grid: &GridSpec,
    tg: &TimeGrid,
) -> Result<BlockReductionReport> {
    let pair = TransferPair::extended_maxwell(weight, grid)?;
    let layout = pair.layout.clone();
    f.validate(tg, layout.total())?;
    let g = f.effective(tg.tau);
    let v = pair.resolvent(Part::Rest, &g, tg.tau)?;

    let ops = ComplexOps::build(grid)?;
    let m0 = PointwiseWeight::new(weight.matrix().restrict_slots(&layout, &[1, 2])?)?;
    let max = maxwell_operator(&ops)?;
    let a = conjugate_weighted(&[(&max, WeightSide::Inverse)], &m0)?;
    let mid = layout.offset(1)..layout.offset(3);
    let gm: Vec<Vec<f64>> = g.iter().map(|x| x[mid.clone()].to_vec()).collect();
    let (w, _) = implicit_euler_seq(&EvoSystem::unit(&a)?, &gm, tg.tau)?;

    let mut scalar_max: f64 = 0.0;
    for x in &v {
        scalar_max = scalar_max
            .max(sparse::max_abs(&x[layout.range(0)]))
            .max(sparse::max_abs(&x[layout.range(3)]));
    }
    let vm: Vec<Vec<f64>> = v.iter().map(|x| x[mid.clone()].to_vec()).collect();
    let maxwell_deviation = seq_rel_diff(&vm, &w);
    let mut failures = Vec::new();
    if scalar_max > SCALAR_SLOT_TOL {
        failures.push(format!("scalar slots reach {scalar_max:e}"));
    }
    if maxwell_deviation > REDUCTION_TOL {
        failures.push(format!("(V1, V2) deviates from the Maxwell solve by {maxwell_deviation:e}"));
    }
    Ok(BlockReductionReport {
        scalar_max,
        maxwell_deviation,
        passed: failures.is_empty(),
        failures,
    })
}

/// `|(∂0 + B1)(∂0 + B2) x - ∂0 (∂0 + B1 + B2) x| / |x-term|` for a given sequence.
pub fn factorization_residual(pair: &TransferPair, x: &[Vec<f64>], tau: f64) -> Result<f64> {
    let lhs = pair.forward(Part::Rest, &pair.forward(Part::Factor, x, tau)?, tau)?;
    let rhs = discrete_d0(&pair.forward(Part::Full, x, tau)?, tau);
    Ok(seq_rel_diff(&lhs, &rhs))
}
