//! Identity checks shared by the suite and the single-check scenarios.
//!
//! Each function returns report entries; a check that errors out becomes a
//! single failed entry instead of aborting the run.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::report::IdentityEntry;
use crate::block::{assemble_block, verify_annihilation, wave_identity_residual, BlockOp, BlockTag};
use crate::dirac::verify_dirac_equivalence;
use crate::discrete::ComplexOps;
use crate::error::{Error, Result};
use crate::evo::{causality_check, solution_bound_check, solve_exponential, Integrator, SourceTerm, TimeGrid, Trajectory};
use crate::grid::GridSpec;
use crate::layout::Layout;
use crate::material::{build_gem_material, eddy_current_preset, maxwell_diagonal_law, verify_h1_h2, MaterialLaw};
use crate::maxwell_dirac::{self as md, Coupling, MdInitial, PicardConfig};
use crate::pointwise::{PointwiseMatrix, PointwiseWeight};
use crate::potentials::{curl_range_residual, solve_potential, verify_potential, POTENTIAL_TOL};
use crate::sparse;
use crate::transfer::{
    block_reduction_check, extended_system, gem_embedding_residual, gem_system, maxwell_system, solve_maxwell,
    SystemInstance, TransferPair, REDUCTION_TOL, SCALAR_SLOT_TOL,
};

pub mod anchor {
    pub const EXACT_SEQUENCE: &str = "discrete complex: curl_int grad_int = 0, div_int curl_int = 0";
    pub const ANNIHILATION: &str = "annihilation: A_Max A_ac = A_ac A_Max = 0";
    pub const WAVE: &str = "wave operator: (A_Max + A_ac)^2 = blockdiag(Laplacian)";
    pub const DIRAC: &str = "Dirac operator unitarily equivalent to extended Maxwell";
    pub const CONJUGATION: &str = "Q0 unitarily equivalent to Q1";
    pub const TRANSFER: &str = "solution transfer: extended Maxwell <-> Maxwell";
    pub const GEM: &str = "solution transfer: extended Maxwell <-> GEM";
    pub const POTENTIAL: &str = "potential reconstruction: statements (a), (b), (c)";
    pub const CAUSALITY: &str = "causal solution operator";
    pub const ENERGY: &str = "energy balance for skew A";
    pub const CONVERGENCE: &str = "fundamental solution propagator";
    pub const MATERIAL: &str = "material law hypotheses (H1), (H2)";
    pub const CHARGE: &str = "charge conservation with rho = |psi|^2";
}

pub const TRANSFER_TOL: f64 = 1e-10;
pub const ROUND_TRIP_TOL: f64 = 1e-11;
pub const EMBEDDING_TOL: f64 = 1e-12;
/// Half-integer and 1/sqrt(2) factor entries round in the last bit.
pub const ORTHOGONALITY_TOL: f64 = 1e-15;
pub const CONJUGATION_TOL: f64 = 1e-14;
pub const ENERGY_TOL: f64 = 1e-12;
pub const ORDER_TOL: f64 = 0.2;
pub const RANGE_TOL: f64 = 1e-10;
pub const PICARD_LIMIT: usize = 5;

fn guard(name: &str, anchor: &str, tol: f64, f: impl FnOnce() -> Result<Vec<IdentityEntry>>) -> Vec<IdentityEntry> {
    f().unwrap_or_else(|e| vec![IdentityEntry::failed(name, anchor, tol, &e)])
}

pub fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

pub fn random_vec(rng: &mut impl Rng, n: usize, amp: f64) -> Vec<f64> {
    (0..n).map(|_| amp * rng.random_range(-1.0..1.0)).collect()
}

pub fn random_seq(rng: &mut impl Rng, dim: usize, steps: usize, amp: f64) -> Vec<Vec<f64>> {
    (0..steps).map(|_| random_vec(rng, dim, amp)).collect()
}

fn dims(c: [usize; 3]) -> String {
    format!("{}x{}x{}", c[0], c[1], c[2])
}

/// Bounded cubes from `sizes` (those with at least 3 cells) plus `(4, 3, 5)`.
fn bounded_shapes(sizes: &[usize]) -> Vec<[usize; 3]> {
    let mut v: Vec<[usize; 3]> = sizes.iter().filter(|&&n| n >= 3).map(|&n| [n; 3]).collect();
    v.push([4, 3, 5]);
    v
}

pub fn exact_sequence(sizes: &[usize]) -> Vec<IdentityEntry> {
    bounded_shapes(sizes)
        .into_iter()
        .flat_map(|c| {
            let name = format!("exact_sequence/bounded/{}", dims(c));
            guard(&name.clone(), anchor::EXACT_SEQUENCE, 0.0, || {
                let r = ComplexOps::build(&GridSpec::bounded(c, 1.0)?)?.exact_sequence_residuals()?;
                Ok(vec![
                    IdentityEntry::at_most(format!("{name}/curl_int_grad_int"), anchor::EXACT_SEQUENCE, r[0], 0.0),
                    IdentityEntry::at_most(format!("{name}/div_int_curl_int"), anchor::EXACT_SEQUENCE, r[1], 0.0),
                    IdentityEntry::at_most(format!("{name}/curl_grad"), anchor::EXACT_SEQUENCE, r[2], 0.0),
                    IdentityEntry::at_most(format!("{name}/div_curl"), anchor::EXACT_SEQUENCE, r[3], 0.0),
                ])
            })
        })
        .collect()
}

pub fn annihilation(sizes: &[usize]) -> Vec<IdentityEntry> {
    let mut grids: Vec<GridSpec> = sizes.iter().filter_map(|&n| GridSpec::periodic([n; 3], 1.0).ok()).collect();
    grids.extend(bounded_shapes(sizes).into_iter().filter_map(|c| GridSpec::bounded(c, 1.0).ok()));
    grids
        .into_iter()
        .flat_map(|g| {
            let name = format!("annihilation/{}/{}", g.backend, dims(g.cells));
            guard(&name.clone(), anchor::ANNIHILATION, 0.0, || {
                let ops = ComplexOps::build(&g)?;
                let max = assemble_block(BlockTag::AMax, &ops)?;
                let ac = assemble_block(BlockTag::Aac, &ops)?;
                Ok(vec![
                    IdentityEntry::at_most(format!("{name}/max_ac"), anchor::ANNIHILATION, verify_annihilation(&max, &ac)?, 0.0),
                    IdentityEntry::at_most(format!("{name}/ac_max"), anchor::ANNIHILATION, verify_annihilation(&ac, &max)?, 0.0),
                ])
            })
        })
        .collect()
}

pub fn wave_identity(sizes: &[usize]) -> Vec<IdentityEntry> {
    let mut shapes: Vec<[usize; 3]> = sizes.iter().map(|&n| [n; 3]).collect();
    shapes.push([6, 4, 4]);
    shapes
        .into_iter()
        .flat_map(|c| {
            let name = format!("wave_identity/periodic/{}", dims(c));
            guard(&name.clone(), anchor::WAVE, 0.0, || {
                let r = wave_identity_residual(&GridSpec::periodic(c, 1.0)?)?;
                Ok(vec![IdentityEntry::at_most(name, anchor::WAVE, r, 0.0)])
            })
        })
        .collect()
}

pub fn dirac(sizes: &[usize]) -> Vec<IdentityEntry> {
    sizes
        .iter()
        .flat_map(|&n| match GridSpec::periodic([n; 3], 1.0) {
            Ok(g) => dirac_on(&g),
            Err(e) => vec![IdentityEntry::failed(format!("dirac/periodic/{}", dims([n; 3])), anchor::DIRAC, 0.0, &e)],
        })
        .collect()
}

pub fn dirac_on(grid: &GridSpec) -> Vec<IdentityEntry> {
    let name = format!("dirac/{}/{}", grid.backend, dims(grid.cells));
    guard(&name.clone(), anchor::DIRAC, 0.0, || {
        let r = verify_dirac_equivalence(grid)?;
        let e = |part: &str, v: f64| IdentityEntry::at_most(format!("{name}/{part}"), anchor::DIRAC, v, 0.0);
        Ok(vec![
            e("chain", r.chain),
            e("wtilde", r.wtilde),
            e("first_order_product", r.first_order),
            e("constant_product", r.constant),
            IdentityEntry::at_most(format!("{name}/orthogonality"), anchor::DIRAC, r.orthogonality, ORTHOGONALITY_TOL),
            IdentityEntry::at_most(format!("{name}/conjugation"), anchor::CONJUGATION, r.conjugation, CONJUGATION_TOL),
        ])
    })
}

pub fn zero_scalar_slots(seq: &mut [Vec<f64>], l: &Layout) {
    for x in seq.iter_mut() {
        x[l.range(0)].iter_mut().for_each(|v| *v = 0.0);
        x[l.range(3)].iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Transfer checks of one weight against one random source.
pub fn transfer_entries(
    prefix: &str,
    anchor: &str,
    pair: &TransferPair,
    f: &SourceTerm,
    tg: &TimeGrid,
) -> Result<Vec<IdentityEntry>> {
    let r = pair.check(f, tg)?;
    Ok(vec![
        IdentityEntry::at_most(format!("{prefix}/full_to_reduced"), anchor, r.full_to_reduced, TRANSFER_TOL),
        IdentityEntry::at_most(format!("{prefix}/reduced_to_full"), anchor, r.reduced_to_full, TRANSFER_TOL),
        IdentityEntry::at_most(format!("{prefix}/round_trip"), anchor, r.round_trip, ROUND_TRIP_TOL),
    ])
}

pub fn block_reduction_entries(
    prefix: &str,
    weight: &PointwiseWeight,
    grid: &GridSpec,
    f: &SourceTerm,
    tg: &TimeGrid,
) -> Vec<IdentityEntry> {
    let name = format!("{prefix}/block_reduction");
    match block_reduction_check(f, weight, grid, tg) {
        Ok(r) => vec![
            IdentityEntry::at_most(format!("{name}/scalar_slots"), anchor::TRANSFER, r.scalar_max, SCALAR_SLOT_TOL),
            IdentityEntry::at_most(format!("{name}/maxwell_deviation"), anchor::TRANSFER, r.maxwell_deviation, REDUCTION_TOL),
        ],
        Err(e) => vec![IdentityEntry::failed(name, anchor::TRANSFER, SCALAR_SLOT_TOL, &e)],
    }
}

pub fn transfer_tg() -> TimeGrid {
    TimeGrid::new(0.05, 40, 0.0, 1.0).expect("valid time grid")
}

/// Extended <-> Maxwell on bounded 3^3 with unit weight, one draw per seed,
/// plus a bi-anisotropic block reduction on periodic 3^3.
pub fn transfer(seeds: &[u64]) -> Vec<IdentityEntry> {
    let tg = transfer_tg();
    let mut out = Vec::new();
    for &seed in seeds {
        let prefix = format!("transfer/bounded/3x3x3/seed{seed}");
        out.extend(guard(&prefix.clone(), anchor::TRANSFER, TRANSFER_TOL, || {
            let grid = GridSpec::bounded([3; 3], 1.0)?;
            let l = Layout::extended(&ComplexOps::build(&grid)?);
            let w = PointwiseWeight::identity(&l);
            let pair = TransferPair::extended_maxwell(&w, &grid)?;
            let mut rng = seeded(seed, 1);
            let f = SourceTerm::from_samples(random_seq(&mut rng, l.total(), tg.steps, 1.0));
            let mut v = transfer_entries(&prefix, anchor::TRANSFER, &pair, &f, &tg)?;
            let mut g = random_seq(&mut rng, l.total(), tg.steps, 1.0);
            zero_scalar_slots(&mut g, &l);
            v.extend(block_reduction_entries(&prefix, &w, &grid, &SourceTerm::from_samples(g), &tg));
            Ok(v)
        }));
    }
    let seed = seeds.first().copied().unwrap_or(0);
    let prefix = "transfer/periodic/3x3x3/bianisotropic".to_string();
    out.extend(guard(&prefix.clone(), anchor::TRANSFER, TRANSFER_TOL, || {
        let grid = GridSpec::periodic([3; 3], 1.0)?;
        let l = Layout::extended(&ComplexOps::build(&grid)?);
        let w = bianisotropic_weight(&l)?;
        let mut rng = seeded(seed, 2);
        let mut g = random_seq(&mut rng, l.total(), tg.steps, 1.0);
        zero_scalar_slots(&mut g, &l);
        Ok(block_reduction_entries(&prefix, &w, &grid, &SourceTerm::from_samples(g), &tg))
    }));
    out
}

/// `diag(1.5, M, 0.7)` with `M` coupling E and H.
pub fn bianisotropic_weight(l: &Layout) -> Result<PointwiseWeight> {
    let mut m = DMatrix::identity(6, 6) * 2.0;
    for i in 0..3 {
        m[(i, 3 + i)] = 0.4;
        m[(3 + i, i)] = 0.4;
    }
    m[(0, 1)] = 0.3;
    m[(1, 0)] = 0.3;
    crate::material::block_structured_weight(l, 1.5, &m, 0.7)
}

/// Random Schur-feasible GEM data: constant `C` on `(C, E, H)` with a
/// coupled `(C, E)` block, and per-point `K`, `S` with `K - S^T C22^-1 S >= 5/8`.
pub fn random_gem_draw(rng: &mut impl Rng, ext: &Layout) -> Result<(PointwiseWeight, PointwiseWeight)> {
    let gl = ext.select(&[0, 1, 2]);
    let mut c = DMatrix::identity(7, 7) * 2.0;
    for i in 0..4 {
        for j in 0..i {
            let v = 0.2 * rng.random_range(-1.0..1.0);
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    let cm = PointwiseMatrix::dense_constant(&gl, &c)?;
    let np = ext.slot(0).dofs;
    let k: Vec<f64> = (0..np).map(|_| rng.random_range(1.0..2.0)).collect();
    let s: Vec<[f64; 3]> = (0..np).map(|_| std::array::from_fn(|_| 0.5 * rng.random_range(-1.0..1.0))).collect();
    let weight = build_gem_material(ext, &cm, &k, &s)?;
    Ok((weight, PointwiseWeight::new(cm)?))
}

/// GEM transfers on periodic 3^3 with one Schur-feasible draw per seed.
pub fn gem(seeds: &[u64]) -> Vec<IdentityEntry> {
    let tg = transfer_tg();
    seeds
        .iter()
        .flat_map(|&seed| {
            let prefix = format!("gem/periodic/3x3x3/seed{seed}");
            guard(&prefix.clone(), anchor::GEM, TRANSFER_TOL, || {
                let grid = GridSpec::periodic([3; 3], 1.0)?;
                let ops = ComplexOps::build(&grid)?;
                let l = Layout::extended(&ops);
                let mut rng = seeded(seed, 3);
                let (w, cw) = random_gem_draw(&mut rng, &l)?;
                let pair = TransferPair::gem(&w, &grid)?;
                let f = SourceTerm::from_samples(random_seq(&mut rng, l.total(), tg.steps, 1.0));
                let mut v = transfer_entries(&prefix, anchor::GEM, &pair, &f, &tg)?;
                let gl = Layout::gem(&ops);
                let fg = SourceTerm::from_samples(random_seq(&mut rng, gl.total(), tg.steps, 1.0));
                let (dev, last) = gem_embedding_residual(&cw, &grid, &fg, &tg)?;
                v.push(IdentityEntry::at_most(format!("{prefix}/embedding"), anchor::GEM, dev, EMBEDDING_TOL));
                v.push(IdentityEntry::at_most(format!("{prefix}/embedding_last_slot"), anchor::GEM, last, 0.0));
                Ok(v)
            })
        })
        .collect()
}

pub fn potential_grid() -> (GridSpec, TimeGrid) {
    (
        GridSpec::bounded([3; 3], 1.0).expect("valid grid"),
        TimeGrid::new(0.05, 30, 0.0, 1.0).expect("valid time grid"),
    )
}

/// Random Maxwell scenario for potential reconstruction; `admissible`
/// enforces `H0 = -curl_int α10`. Returns the `(E, H)` trajectory and `α10`.
pub fn potential_scenario(grid: &GridSpec, tg: &TimeGrid, seed: u64, admissible: bool) -> Result<(Trajectory, Vec<f64>)> {
    let ops = ComplexOps::build(grid)?;
    let l = Layout::maxwell(&ops);
    let mut rng = seeded(seed, 4);
    let alpha10 = random_vec(&mut rng, ops.vector1.dofs, 1.0);
    let h0: Vec<f64> = if admissible {
        ops.curl_int.apply(&alpha10)?.iter().map(|x| -x).collect()
    } else {
        random_vec(&mut rng, ops.vector2.dofs, 1.0)
    };
    let e0 = random_vec(&mut rng, ops.vector1.dofs, 1.0);
    let j: Vec<Vec<f64>> = (0..tg.steps)
        .map(|_| {
            let mut v = random_vec(&mut rng, ops.vector1.dofs, 1.0);
            v.extend(std::iter::repeat_n(0.0, ops.vector2.dofs));
            v
        })
        .collect();
    let mut imp = e0;
    imp.extend(h0);
    let f = SourceTerm::from_samples(j).with_impulse(0, imp);
    let eh = solve_maxwell(&MaterialLaw::identity(&l), grid, &f, tg)?;
    Ok((eh, alpha10))
}

/// Clause residuals and range check per admissible seed, then a negative
/// control whose clause (a) must fail.
pub fn potentials_on(grid: &GridSpec, tg: &TimeGrid, seeds: &[u64], negative_seed: Option<u64>) -> Vec<IdentityEntry> {
    let tag = format!("potential/{}/{}", grid.backend, dims(grid.cells));
    let mut out = Vec::new();
    for &seed in seeds {
        let prefix = format!("{tag}/seed{seed}");
        out.extend(guard(&prefix.clone(), anchor::POTENTIAL, POTENTIAL_TOL, || {
            let (eh, a10) = potential_scenario(grid, tg, seed, true)?;
            let grid = *grid;
            let ops = ComplexOps::build(&grid)?;
            let h0: Vec<f64> = ops.curl_int.apply(&a10)?.iter().map(|x| -x).collect();
            let range = curl_range_residual(&h0, &ops)?;
            let st = solve_potential(&eh, &a10, &grid, &eh.tg)?;
            let r = verify_potential(&st, &eh, &a10, &grid, POTENTIAL_TOL)?;
            Ok(vec![
                IdentityEntry::at_most(format!("{prefix}/range_check"), anchor::POTENTIAL, range, RANGE_TOL),
                IdentityEntry::at_most(format!("{prefix}/clause_a"), anchor::POTENTIAL, r.clause_a, POTENTIAL_TOL),
                IdentityEntry::at_most(format!("{prefix}/clause_b"), anchor::POTENTIAL, r.clause_b, POTENTIAL_TOL),
                IdentityEntry::at_most(format!("{prefix}/clause_c"), anchor::POTENTIAL, r.clause_c, POTENTIAL_TOL),
            ])
        }));
    }
    if let Some(negative_seed) = negative_seed {
        let name = format!("{tag}/negative_control_seed{negative_seed}/clause_a_fails");
        out.extend(guard(&name.clone(), anchor::POTENTIAL, POTENTIAL_TOL, || {
            let (eh, a10) = potential_scenario(grid, tg, negative_seed, false)?;
            let st = solve_potential(&eh, &a10, grid, &eh.tg)?;
            let r = verify_potential(&st, &eh, &a10, grid, POTENTIAL_TOL)?;
            Ok(vec![IdentityEntry::exceeds(name, anchor::POTENTIAL, r.clause_a, POTENTIAL_TOL)])
        }));
    }
    out
}

pub fn potentials(seeds: &[u64], negative_seed: u64) -> Vec<IdentityEntry> {
    let (grid, tg) = potential_grid();
    potentials_on(&grid, &tg, seeds, Some(negative_seed))
}

/// The three system kinds on bounded 3^3 with unit material.
pub fn causality_systems() -> Result<Vec<(&'static str, SystemInstance)>> {
    let grid = GridSpec::bounded([3; 3], 1.0)?;
    let ops = ComplexOps::build(&grid)?;
    Ok(vec![
        ("maxwell", maxwell_system(&MaterialLaw::identity(&Layout::maxwell(&ops)), &grid)?),
        ("extended", extended_system(&PointwiseWeight::identity(&Layout::extended(&ops)), &grid)?),
        ("gem", gem_system(&PointwiseWeight::identity(&Layout::gem(&ops)), &grid)?),
    ])
}

pub const CAUSALITY_START: usize = 5;

/// Residual is the largest state norm before the source starts.
pub fn causality(seed: u64) -> Vec<IdentityEntry> {
    guard("causality", anchor::CAUSALITY, 0.0, || {
        let tg = TimeGrid::new(0.1, 12, 0.0, 1.0)?;
        let mut out = Vec::new();
        for (i, (name, sys)) in causality_systems()?.into_iter().enumerate() {
            let mut rng = seeded(seed, 10 + i as u64);
            let dim = sys.layout.total();
            let mut seq = random_seq(&mut rng, dim, tg.steps, 1.0);
            seq.iter_mut().take(CAUSALITY_START).for_each(|v| v.iter_mut().for_each(|x| *x = 0.0));
            let f = SourceTerm::from_samples(seq).with_impulse(CAUSALITY_START, random_vec(&mut rng, dim, 1.0));
            for which in [Integrator::ImplicitEuler, Integrator::CrankNicolson, Integrator::Exponential] {
                let entry = format!("causality/{name}/{which}");
                let e = match sys.solve(which, &f, &tg) {
                    Ok(t) => {
                        let before = t.samples[..CAUSALITY_START].iter().map(|u| sparse::max_abs(u)).fold(0.0, f64::max);
                        let after = sparse::max_abs(&t.samples[CAUSALITY_START]);
                        let mut e = IdentityEntry::at_most(entry, anchor::CAUSALITY, before, 0.0);
                        if let Err(err) = causality_check(&t, CAUSALITY_START) {
                            e = e.with_detail(err.to_string());
                        } else if after == 0.0 {
                            e.passed = false;
                            e = e.with_detail("state stays zero after the source starts");
                        }
                        e
                    }
                    Err(err) => IdentityEntry::failed(entry, anchor::CAUSALITY, 0.0, &err),
                };
                out.push(e);
            }
        }
        Ok(out)
    })
}

/// Crank-Nicolson energy conservation with `M1 = 0`, `F = 0` over 200 steps,
/// and implicit-Euler monotone dissipation with `sym(M1) >= 0`.
pub fn energy(seed: u64) -> Vec<IdentityEntry> {
    let mut out = guard("energy/crank_nicolson", anchor::ENERGY, ENERGY_TOL, || {
        let grid = GridSpec::bounded([3; 3], 1.0)?;
        let ops = ComplexOps::build(&grid)?;
        let l = Layout::maxwell(&ops);
        let mut rng = seeded(seed, 20);
        let (ne, nh) = (l.slot(0).dofs, l.slot(1).dofs);
        let eps: Vec<f64> = (0..ne).map(|_| rng.random_range(0.5..2.0)).collect();
        let mu: Vec<f64> = (0..nh).map(|_| rng.random_range(0.5..2.0)).collect();
        let law = maxwell_diagonal_law(&l, &eps, &mu, &vec![0.0; ne])?;
        let sys = maxwell_system(&law, &grid)?;
        let tg = TimeGrid::new(0.1, 200, 0.0, 0.1)?;
        let f = SourceTerm::zeros(l.total(), tg.steps).with_impulse(0, random_vec(&mut rng, l.total(), 1.0));
        let t = sys.solve(Integrator::CrankNicolson, &f, &tg)?;
        let en = t.energies(&law.m0.to_sparse(&l)?)?;
        let drift = en.iter().map(|e| (e - en[0]).abs() / en[0]).fold(0.0, f64::max);
        Ok(vec![IdentityEntry::at_most("energy/crank_nicolson/conservation_200_steps", anchor::ENERGY, drift, ENERGY_TOL)])
    });
    out.extend(guard("energy/implicit_euler", anchor::ENERGY, 0.0, || {
        let grid = GridSpec::bounded([3; 3], 1.0)?;
        let ops = ComplexOps::build(&grid)?;
        let l = Layout::maxwell(&ops);
        let mut rng = seeded(seed, 21);
        let (ne, nh) = (l.slot(0).dofs, l.slot(1).dofs);
        let eps: Vec<f64> = (0..ne).map(|_| rng.random_range(0.5..2.0)).collect();
        let mu: Vec<f64> = (0..nh).map(|_| rng.random_range(0.5..2.0)).collect();
        let sigma: Vec<f64> = (0..ne).map(|_| rng.random_range(0.0..1.0)).collect();
        let law = maxwell_diagonal_law(&l, &eps, &mu, &sigma)?;
        let sys = maxwell_system(&law, &grid)?;
        let tg = TimeGrid::new(0.1, 100, 0.0, 0.1)?;
        let f = SourceTerm::zeros(l.total(), tg.steps).with_impulse(0, random_vec(&mut rng, l.total(), 1.0));
        let t = sys.solve(Integrator::ImplicitEuler, &f, &tg)?;
        let en = t.energies(&law.m0.to_sparse(&l)?)?;
        let rise = en.windows(2).map(|w| (w[1] - w[0]) / en[0]).fold(f64::NEG_INFINITY, f64::max);
        Ok(vec![IdentityEntry::at_most("energy/implicit_euler/monotone_dissipation", anchor::ENERGY, rise.max(0.0), 0.0)
            .with_detail(format!("largest relative energy change per step {rise:e}"))])
    }));
    out
}

/// Pointwise material used for the convergence study: a skew rotation
/// mixing all components plus weak damping.
pub fn convergence_m1(seed: u64) -> DMatrix<f64> {
    let mut rng = seeded(seed, 30);
    let r = DMatrix::from_fn(8, 8, |_, _| rng.random_range(-1.0..1.0));
    (&r - r.transpose()) * CONVERGENCE_SKEW_SCALE + DMatrix::identity(8, 8) * 0.1
}

/// Keeps `tau |M1| < 0.2` at the coarsest step so all three levels are asymptotic.
pub const CONVERGENCE_SKEW_SCALE: f64 = 0.25;

/// Relative max-over-steps errors of implicit Euler and Crank-Nicolson
/// against the exponential propagator on the periodic extended system with
/// `M0 = 1` and constant `M1`, for `tau = 0.1 / 2^k`, `k < levels`.
pub fn convergence_errors(n: usize, seed: u64, levels: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let grid = GridSpec::periodic([n; 3], 1.0)?;
    let ops = ComplexOps::build(&grid)?;
    let a = assemble_block(BlockTag::Extended, &ops)?;
    let l = a.layout().clone();
    let m1 = PointwiseMatrix::dense_constant(&l, &convergence_m1(seed))?;
    let law = MaterialLaw::new(l.clone(), PointwiseMatrix::identity(&l), m1.clone())?;
    let gen = m1.to_sparse(&l)?.add(&a.to_sparse())?;
    let b = BlockOp::from_sparse(grid, l.clone(), BlockTag::Custom, &gen)?;
    let mut rng = seeded(seed, 31);
    let v = random_vec(&mut rng, l.total(), 1.0);
    let (mut ie, mut cn) = (Vec::new(), Vec::new());
    for k in 0..levels {
        let steps = 10 << k;
        let tg = TimeGrid::new(1.0 / steps as f64, steps, 0.0, 1.0)?;
        let f = SourceTerm::zeros(l.total(), steps).with_impulse(0, v.clone());
        let reference = solve_exponential(&b, &f, &tg)?;
        let scale = reference.samples.iter().map(|u| sparse::max_abs(u)).fold(0.0, f64::max);
        let err = |t: &Trajectory| {
            t.samples
                .iter()
                .zip(&reference.samples)
                .map(|(x, y)| sparse::max_abs_diff(x, y))
                .fold(0.0, f64::max)
                / scale
        };
        ie.push(err(&crate::evo::solve_implicit_euler(&law, &a, &f, &tg)?));
        cn.push(err(&crate::evo::solve_crank_nicolson(&law, &a, &f, &tg)?));
    }
    Ok((ie, cn))
}

pub fn observed_orders(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

pub fn convergence(seed: u64) -> Vec<IdentityEntry> {
    let mut out = Vec::new();
    for n in [2, 4] {
        let prefix = format!("convergence/periodic/{}", dims([n; 3]));
        out.extend(guard(&prefix.clone(), anchor::CONVERGENCE, ORDER_TOL, || {
            let (ie, cn) = convergence_errors(n, seed, 3)?;
            let mut v = Vec::new();
            for (label, errs, expected) in [("implicit_euler", &ie, 1.0), ("crank_nicolson", &cn, 2.0)] {
                for (k, p) in observed_orders(errs).into_iter().enumerate() {
                    v.push(
                        IdentityEntry::at_most(format!("{prefix}/{label}/order_{k}"), anchor::CONVERGENCE, (p - expected).abs(), ORDER_TOL)
                            .with_detail(format!("order {p:.4}, errors {errs:?}")),
                    );
                }
            }
            Ok(v)
        }));
    }
    out
}

/// Eddy-current certification, indefinite rejection and the a priori bound.
pub fn material(seed: u64) -> Vec<IdentityEntry> {
    guard("material", anchor::MATERIAL, 0.0, || {
        let grid = GridSpec::bounded([3; 3], 1.0)?;
        let ops = ComplexOps::build(&grid)?;
        let l = Layout::maxwell(&ops);
        let (ne, nh) = (l.slot(0).dofs, l.slot(1).dofs);
        let mut rng = seeded(seed, 40);
        let mut out = Vec::new();
        let nu = 1.0;
        let sigma: Vec<f64> = (0..ne).map(|_| rng.random_range(0.5..2.0)).collect();
        let mu: Vec<f64> = (0..nh).map(|_| rng.random_range(0.5..2.0)).collect();
        let law = eddy_current_preset(&l, &sigma, &mu)?;
        let expected = sigma.iter().copied().fold(f64::INFINITY, f64::min).min(mu.iter().map(|m| nu * m).fold(f64::INFINITY, f64::min));
        let rep = verify_h1_h2(&law, nu)?;
        out.push(IdentityEntry::at_most("material/eddy_current/c0_exact", anchor::MATERIAL, (rep.c0 - expected).abs(), 0.0));

        let m0 = PointwiseMatrix::Diagonal {
            values: (0..l.total()).map(|i| if i == 0 { -1.0 } else { 1.0 }).collect(),
        };
        let bad = MaterialLaw::new(l.clone(), m0, PointwiseMatrix::zeros(&l))?;
        let rejected = matches!(verify_h1_h2(&bad, nu), Err(Error::CoercivityViolated { .. }));
        let mut e = IdentityEntry::at_most("material/indefinite_m0/rejected", anchor::MATERIAL, if rejected { 0.0 } else { 1.0 }, 0.0);
        if !rejected {
            e = e.with_detail("indefinite M0 was certified");
        }
        out.push(e);

        let mut worst: f64 = 0.0;
        for run in 0..10 {
            let sigma: Vec<f64> = (0..ne).map(|_| rng.random_range(0.5..2.0)).collect();
            let mu: Vec<f64> = (0..nh).map(|_| rng.random_range(0.5..2.0)).collect();
            let law = eddy_current_preset(&l, &sigma, &mu)?;
            let c0 = verify_h1_h2(&law, nu)?.c0;
            let tg = TimeGrid::new(0.1, 20, 0.0, nu)?;
            let f = SourceTerm::from_samples(random_seq(&mut rng, l.total(), tg.steps, 1.0));
            let t = maxwell_system(&law, &grid)?.solve(Integrator::ImplicitEuler, &f, &tg)?;
            let m0_norm = mu.iter().copied().fold(0.0, f64::max);
            let b = solution_bound_check(&t, &f, c0, m0_norm);
            if !b.holds {
                return Ok(vec![IdentityEntry::at_most("material/bound", anchor::MATERIAL, b.solution_norm / b.bound, 1.0)
                    .with_detail(format!("run {run}: {b:?}"))]);
            }
            worst = worst.max(b.solution_norm / b.bound);
        }
        out.push(IdentityEntry::at_most("material/bound/10_runs", anchor::MATERIAL, worst, 1.0));
        Ok(out)
    })
}

/// Small admissible coupled data on the periodic 2^3 grid: each point
/// carries a spinor of norm `scale`, so `|ψ0|^2` is constant.
pub fn md_initial(grid: &GridSpec, scale: f64, seed: u64) -> Result<MdInitial> {
    let ops = ComplexOps::build(grid)?;
    let np = grid.periodic_points();
    let mut rng = seeded(seed, 50);
    let mut psi0 = vec![0.0; 8 * np];
    for p in 0..np {
        let v = random_vec(&mut rng, 8, 1.0);
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for c in 0..8 {
            psi0[c * np + p] = scale * v[c] / n;
        }
    }
    // E0 = curl w has div E0 = 0; on 2^3 every difference vanishes anyway.
    let e0 = ops.curl.apply(&random_vec(&mut rng, ops.vector2.dofs, scale))?;
    let alpha10 = random_vec(&mut rng, ops.vector1.dofs, scale);
    let h0 = ops.curl_int.apply(&alpha10)?.iter().map(|x| -x).collect();
    Ok(MdInitial { e0, h0, psi0, alpha10 })
}

pub const MD_ALPHA_K: [f64; 3] = [0.3, -0.2, 0.5];

/// `sum_{r<c} (S_rc + S_cr) ψ_r ψ_c + sum_r S_rr ψ_r^2` at every point,
/// which vanishes exactly iff `S` is exactly skew.
pub fn skew_form_residual(s: &DMatrix<f64>, psi: &[f64], np: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for p in 0..np {
        let x = |c: usize| psi[c * np + p];
        let mut q = 0.0;
        for r in 0..8 {
            q += s[(r, r)] * x(r) * x(r);
            for c in r + 1..8 {
                q += (s[(r, c)] + s[(c, r)]) * (x(r) * x(c));
            }
        }
        worst = worst.max(q.abs());
    }
    worst
}

/// Charge residual maxima for `tau = tau0 / 2^k` up to `final_time`.
pub fn md_charge_study(
    grid: &GridSpec,
    init: &MdInitial,
    coupling: &Coupling,
    tau0: f64,
    final_time: f64,
    levels: usize,
    picard: PicardConfig,
) -> Result<(Vec<f64>, Vec<md::MdTrajectory>)> {
    let mut maxes = Vec::new();
    let mut trajs = Vec::new();
    for k in 0..levels {
        let tau = tau0 / (1u64 << k) as f64;
        let steps = (final_time / tau).round() as usize;
        let tg = TimeGrid::new(tau, steps, 0.0, 1.0)?;
        let t = md::solve_maxwell_dirac(grid, init, coupling, &tg, picard)?;
        maxes.push(md::charge_residual(&t, grid)?.1);
        trajs.push(t);
    }
    Ok((maxes, trajs))
}

pub fn maxwell_dirac(seed: u64) -> Vec<IdentityEntry> {
    guard("maxwell_dirac", anchor::CHARGE, ORDER_TOL, || {
        let grid = GridSpec::periodic([2; 3], 1.0)?;
        let init = md_initial(&grid, 1e-3, seed)?;
        let coupling = Coupling::standard(MD_ALPHA_K)?;
        Ok(maxwell_dirac_entries(&grid, &init, &coupling, 0.1, 1.0, 3, PicardConfig::default())?.0)
    })
}

/// Charge-order, admissibility, skew-cancellation and Picard entries of a
/// `tau`-halving study; also returns the trajectories, coarsest first.
pub fn maxwell_dirac_entries(
    grid: &GridSpec,
    init: &MdInitial,
    coupling: &Coupling,
    tau0: f64,
    final_time: f64,
    levels: usize,
    picard: PicardConfig,
) -> Result<(Vec<IdentityEntry>, Vec<md::MdTrajectory>)> {
    {
        let (maxes, trajs) = md_charge_study(grid, init, coupling, tau0, final_time, levels, picard)?;
        let prefix = format!("maxwell_dirac/{}/{}", grid.backend, dims(grid.cells));
        let grid = *grid;
        let init = init.clone();
        let mut out = Vec::new();
        for (k, p) in observed_orders(&maxes).into_iter().enumerate() {
            out.push(
                IdentityEntry::at_most(format!("{prefix}/charge_residual_order_{k}"), anchor::CHARGE, (p - 1.0).abs(), ORDER_TOL)
                    .with_detail(format!("order {p:.4}, maxima {maxes:?}")),
            );
        }
        out.push(IdentityEntry::at_most(
            format!("{prefix}/admissibility_defect"),
            anchor::CHARGE,
            trajs[0].admissibility_defect,
            md::ADMISSIBILITY_TOL,
        ));
        let mut bad = init.clone();
        bad.psi0[0] += 1e-3;
        let tg = TimeGrid::new(0.1, 2, 0.0, 1.0)?;
        let rejected = matches!(md::solve_maxwell_dirac(&grid, &bad, coupling, &tg, picard), Err(Error::Admissibility(_)));
        out.push(IdentityEntry::at_most(format!("{prefix}/inadmissible_rejected"), anchor::CHARGE, if rejected { 0.0 } else { 1.0 }, 0.0));
        let np = grid.periodic_points();
        let skew = trajs
            .iter()
            .flat_map(|t| t.psi.iter())
            .map(|psi| skew_form_residual(&coupling.s, psi, np))
            .fold(0.0, f64::max);
        out.push(IdentityEntry::at_most(format!("{prefix}/skew_s_cancellation"), anchor::CHARGE, skew, 0.0));
        let iters = trajs.iter().flat_map(|t| t.picard_iterations.iter().copied()).max().unwrap_or(0);
        out.push(IdentityEntry::at_most(format!("{prefix}/picard_iterations"), anchor::CHARGE, iters as f64, PICARD_LIMIT as f64));
        Ok((out, trajs))
    }
}

/// The full identity suite; `sizes` drives the purely algebraic checks.
pub fn identity_suite(sizes: &[usize], seed: u64) -> Vec<IdentityEntry> {
    let seeds = [seed, seed + 1, seed + 2];
    let pot_seeds: Vec<u64> = (0..5).map(|i| seed + i).collect();
    let mut out = Vec::new();
    out.extend(exact_sequence(sizes));
    out.extend(annihilation(sizes));
    out.extend(wave_identity(sizes));
    out.extend(dirac(sizes));
    out.extend(transfer(&seeds));
    out.extend(gem(&seeds));
    out.extend(potentials(&pot_seeds, seed + 5));
    out.extend(causality(seed));
    out.extend(energy(seed));
    out.extend(convergence(seed));
    out.extend(material(seed));
    out.extend(maxwell_dirac(seed));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skew_form_is_exact_for_skew_and_detects_symmetric_part() {
        let c = Coupling::standard(MD_ALPHA_K).unwrap();
        let mut rng = seeded(1, 0);
        let psi = random_vec(&mut rng, 16, 1.0);
        assert_eq!(skew_form_residual(&c.s, &psi, 2), 0.0);
        let bad = &c.s + DMatrix::identity(8, 8) * 1e-3;
        assert!(skew_form_residual(&bad, &psi, 2) > 0.0);
    }

    #[test]
    fn gem_draws_are_feasible() {
        let grid = GridSpec::periodic([2; 3], 1.0).unwrap();
        let l = Layout::extended(&ComplexOps::build(&grid).unwrap());
        for s in 0..5 {
            assert!(random_gem_draw(&mut seeded(s, 3), &l).is_ok());
        }
    }

    #[test]
    fn convergence_orders_on_small_grid() {
        let (ie, cn) = convergence_errors(2, 0, 3).unwrap();
        for p in observed_orders(&ie) {
            assert!((p - 1.0).abs() < ORDER_TOL, "{ie:?}");
        }
        for p in observed_orders(&cn) {
            assert!((p - 2.0).abs() < ORDER_TOL, "{cn:?}");
        }
    }

    #[test]
    fn suite_pieces_pass() {
        for e in exact_sequence(&[3]).iter().chain(&annihilation(&[2, 3])).chain(&causality(1)).chain(&energy(1)).chain(&material(1)).chain(&maxwell_dirac(1)) {
            assert!(e.passed, "{e:?}");
        }
    }
}
