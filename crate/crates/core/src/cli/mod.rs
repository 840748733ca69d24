//! Batch scenario runner behind the `evomax` binary.
//!
//! `run <config>` executes one scenario, `suite` runs every identity check,
//! `schema` prints the configuration schema and `list` the scenario names.
//! Each run writes `report.json` (deterministic for a given config and seed),
//! `timings.json` (wall clock only) and scenario CSV files.

pub mod checks;
pub mod config;
pub mod report;

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use nalgebra::DMatrix;
use serde::Serialize;

use self::checks::{anchor, seeded};
use self::config::{ConfigError, MaterialConfig, ScenarioConfig, ScenarioKind, SourceConfig};
use self::report::{IdentityEntry, IdentityReport};
use crate::discrete::ComplexOps;
use crate::error::{Error, Result};
use crate::evo::{causality_check, read_field_dump, write_diagnostics_csv, write_field_dump, SourceTerm, TimeGrid};
use crate::grid::GridSpec;
use crate::layout::Layout;
use crate::linsolve::SOLVE_TOL;
use crate::material::{block_structured_weight, build_gem_material, eddy_current_preset, maxwell_diagonal_law, MaterialLaw};
use crate::maxwell_dirac::{Coupling, PicardConfig};
use crate::pointwise::{PointwiseMatrix, PointwiseWeight};
use crate::sparse;
use crate::transfer::{extended_system, gem_system, maxwell_system, SystemInstance, SystemKind, TransferPair};

/// Environment variable that overrides the output directory.
pub const OUTPUT_ENV: &str = "EVOMAX_OUTPUT_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

const CSV_HELP: &str = "\
CSV outputs (one row per time step unless noted):
  diagnostics.csv  solve: t, norm, weighted_norm (cumulative), norm_<slot> per slot, energy
  transfer.csv     transfer_check: t, norm_full, norm_reduced, round_trip_error
  potential.csv    potential_reconstruction, one row per scenario:
                   seed, admissible, clause_a, clause_b, clause_c, range_residual
  charge.csv       maxwell_dirac, finest tau: t, charge_residual, total_charge,
                   picard_iterations, contraction
Reports: report.json (deterministic), timings.json (wall clock).
Exit codes: 0 all checks pass, 1 check failure or runtime error, 2 config error.";

#[derive(Debug, Parser)]
#[command(name = "evomax", version, about = "Structure-preserving evolutionary-system scenarios and identity checks", after_help = CSV_HELP)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the scenario described by a TOML config.
    Run { config: PathBuf },
    /// Run the identity suite.
    Suite {
        /// Cube sizes for the algebraic checks.
        #[arg(long, value_delimiter = ',', default_value = "2,3,4")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, env = OUTPUT_ENV, default_value = "evomax-out")]
        output_dir: PathBuf,
    },
    /// Print the configuration schema with defaults.
    Schema,
    /// List scenario kinds.
    List,
}

pub fn list_scenarios() -> String {
    ScenarioKind::ALL
        .iter()
        .map(|k| format!("{:<26}{}\n", k.name(), k.summary()))
        .collect()
}

/// Parse arguments, run, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    faer::set_global_parallelism(faer::Par::Seq);
    match cli.command {
        Command::Schema => {
            print!("{}", config::schema_text());
            EXIT_OK
        }
        Command::List => {
            print!("{}", list_scenarios());
            EXIT_OK
        }
        Command::Run { config } => {
            let text = match std::fs::read_to_string(&config) {
                Ok(t) => t,
                Err(e) => {
                    return config_failure(&ConfigError {
                        key: "<file>".into(),
                        message: format!("cannot read {}: {e}", config.display()),
                    })
                }
            };
            let cfg = match ScenarioConfig::from_toml(&text) {
                Ok(c) => c,
                Err(e) => return config_failure(&e),
            };
            let out = std::env::var_os(OUTPUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
            finish(run_config(&cfg, &out))
        }
        Command::Suite { sizes, seed, output_dir } => {
            let mut cfg = ScenarioConfig::default_for(ScenarioKind::IdentitySuite);
            cfg.seed = seed;
            cfg.suite.sizes = sizes;
            if let Err(e) = cfg.validate() {
                return config_failure(&e);
            }
            finish(run_config(&cfg, &output_dir))
        }
    }
}

fn config_failure(e: &ConfigError) -> i32 {
    eprintln!("{}", serde_json::json!({ "error": "config", "key": e.key, "message": e.message }));
    EXIT_CONFIG
}

fn finish(r: Result<IdentityReport>) -> i32 {
    match r {
        Ok(rep) if rep.passed => {
            println!("{}: {} checks passed", rep.scenario, rep.entries.len());
            EXIT_OK
        }
        Ok(rep) => {
            for e in rep.failures() {
                eprintln!(
                    "FAIL {} residual={} tol={:e}{}",
                    e.name,
                    e.residual.map_or("n/a".into(), |r| format!("{r:e}")),
                    e.tolerance,
                    e.detail.as_ref().map_or(String::new(), |d| format!(" ({d})"))
                );
            }
            EXIT_FAILED
        }
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": "runtime", "message": e.to_string() }));
            EXIT_FAILED
        }
    }
}

#[derive(Serialize)]
struct Timings<'a> {
    scenario: &'a str,
    elapsed_seconds: f64,
    finished_unix_seconds: u64,
}

/// Run a validated config, writing artifacts into `out`.
pub fn run_config(cfg: &ScenarioConfig, out: &Path) -> Result<IdentityReport> {
    std::fs::create_dir_all(out)?;
    let start = Instant::now();
    let mut rep = IdentityReport::new(cfg.scenario.name(), cfg.seed);
    let entries = match cfg.scenario {
        ScenarioKind::Solve => solve_scenario(cfg, out)?,
        ScenarioKind::TransferCheck => transfer_scenario(cfg, out)?,
        ScenarioKind::DiracEquivalence => checks::dirac_on(&grid(cfg)?),
        ScenarioKind::PotentialReconstruction => potential_scenario(cfg, out)?,
        ScenarioKind::MaxwellDirac => md_scenario(cfg, out)?,
        ScenarioKind::IdentitySuite => checks::identity_suite(&cfg.suite.sizes, cfg.seed),
    };
    rep.extend(entries)?;
    std::fs::write(out.join("report.json"), rep.to_json())?;
    let t = Timings {
        scenario: cfg.scenario.name(),
        elapsed_seconds: start.elapsed().as_secs_f64(),
        finished_unix_seconds: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
    };
    std::fs::write(out.join("timings.json"), serde_json::to_string_pretty(&t).expect("timings serialize"))?;
    Ok(rep)
}

fn grid(cfg: &ScenarioConfig) -> Result<GridSpec> {
    cfg.grid_spec().map_err(|e| Error::Config(e.to_string()))
}

fn time_grid(cfg: &ScenarioConfig) -> Result<TimeGrid> {
    TimeGrid::new(cfg.time.tau, cfg.time.steps, 0.0, cfg.time.nu)
}

fn dense(rows: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), rows.len(), |r, c| rows[r][c])
}

/// Weight on the extended layout described by the material section.
pub fn extended_weight(m: &MaterialConfig, l: &Layout) -> Result<PointwiseWeight> {
    match m {
        MaterialConfig::Identity => Ok(PointwiseWeight::identity(l)),
        MaterialConfig::BlockStructured { e00, middle, e33 } => block_structured_weight(l, *e00, &dense(middle), *e33),
        MaterialConfig::Dense { matrix } => PointwiseWeight::new(PointwiseMatrix::dense_constant(l, &dense(matrix))?),
        MaterialConfig::Gem { c, k, s } => {
            let gl = l.select(&[0, 1, 2]);
            let np = l.slot(0).dofs;
            let cm = PointwiseMatrix::dense_constant(&gl, &dense(c))?;
            build_gem_material(l, &cm, &vec![*k; np], &vec![*s; np])
        }
        _ => Err(Error::InvalidMaterial("this material describes a Maxwell law, not a weight".into())),
    }
}

/// System instance described by the config.
pub fn build_system(cfg: &ScenarioConfig) -> Result<SystemInstance> {
    let g = grid(cfg)?;
    let ops = ComplexOps::build(&g)?;
    match cfg.system.kind {
        SystemKind::Maxwell => {
            let l = Layout::maxwell(&ops);
            let law = match &cfg.material {
                MaterialConfig::Identity => MaterialLaw::identity(&l),
                MaterialConfig::Diagonal { eps, mu, sigma } => maxwell_diagonal_law(
                    &l,
                    &eps.sample(&g, l.slot(0)),
                    &mu.sample(&g, l.slot(1)),
                    &sigma.sample(&g, l.slot(0)),
                )?,
                MaterialConfig::EddyCurrent { sigma, mu } => {
                    eddy_current_preset(&l, &sigma.sample(&g, l.slot(0)), &mu.sample(&g, l.slot(1)))?
                }
                _ => return Err(Error::InvalidMaterial("Maxwell systems take identity, diagonal or eddy_current laws".into())),
            };
            maxwell_system(&law, &g)
        }
        SystemKind::Extended => extended_system(&extended_weight(&cfg.material, &Layout::extended(&ops))?, &g),
        SystemKind::Gem => {
            let gl = Layout::gem(&ops);
            let w = match &cfg.material {
                MaterialConfig::Identity => PointwiseWeight::identity(&gl),
                MaterialConfig::Dense { matrix } => PointwiseWeight::new(PointwiseMatrix::dense_constant(&gl, &dense(matrix))?)?,
                _ => return Err(Error::InvalidMaterial("GEM systems take identity or a dense 7x7 weight".into())),
            };
            gem_system(&w, &g)
        }
    }
}

/// Source described by the config for a system of dimension `dim`.
pub fn build_source(cfg: &ScenarioConfig, dim: usize, tg: &TimeGrid) -> Result<SourceTerm> {
    let mut rng = seeded(cfg.seed, 100);
    let f = match &cfg.source {
        SourceConfig::Zero => SourceTerm::zeros(dim, tg.steps),
        SourceConfig::Random { amplitude, start_step } => {
            let mut seq = checks::random_seq(&mut rng, dim, tg.steps, *amplitude);
            seq.iter_mut().take(*start_step).for_each(|v| v.iter_mut().for_each(|x| *x = 0.0));
            SourceTerm::from_samples(seq)
        }
        SourceConfig::Impulse { amplitude } => {
            SourceTerm::zeros(dim, tg.steps).with_impulse(0, checks::random_vec(&mut rng, dim, *amplitude))
        }
        SourceConfig::GaussianPulse { amplitude, center, width } => {
            let profile = checks::random_vec(&mut rng, dim, 1.0);
            SourceTerm::from_fn(dim, tg, |_, t| {
                let s = amplitude * (-((t - center) / width).powi(2)).exp();
                profile.iter().map(|p| s * p).collect()
            })
        }
        SourceConfig::File { path } => {
            let (_, samples) = read_field_dump(Path::new(path))?;
            SourceTerm::from_samples(samples)
        }
    };
    f.validate(tg, dim)?;
    Ok(f)
}

fn solve_scenario(cfg: &ScenarioConfig, out: &Path) -> Result<Vec<IdentityEntry>> {
    let sys = build_system(cfg)?;
    let tg = time_grid(cfg)?;
    let f = build_source(cfg, sys.layout.total(), &tg)?;
    let t = sys.solve(cfg.system.integrator, &f, &tg)?;
    let m0 = sys.law.m0.to_sparse(&sys.layout)?;
    let energy = t.energies(&m0)?;
    write_diagnostics_csv(&out.join("diagnostics.csv"), &t, &[("energy", energy)])?;
    if cfg.output.dump_fields {
        write_field_dump(&out.join("fields.evof"), &t)?;
    }
    let kind = format!("{:?}", sys.kind).to_lowercase();
    let prefix = format!("solve/{kind}/{}", cfg.system.integrator);
    let finite = t.samples.iter().flatten().all(|x| x.is_finite());
    let mut v = vec![
        IdentityEntry::at_most(format!("{prefix}/linear_solve_residual"), "linear solve", t.max_residual, SOLVE_TOL),
        IdentityEntry::at_most(format!("{prefix}/finite_states"), "linear solve", if finite { 0.0 } else { 1.0 }, 0.0),
    ];
    if let Some(start) = f.support_start().filter(|&s| s > 0) {
        let before = t.samples[..start].iter().map(|u| sparse::max_abs(u)).fold(0.0, f64::max);
        let mut e = IdentityEntry::at_most(format!("{prefix}/causality"), anchor::CAUSALITY, before, 0.0);
        if let Err(err) = causality_check(&t, start) {
            e = e.with_detail(err.to_string());
        }
        v.push(e);
    }
    Ok(v)
}

fn transfer_scenario(cfg: &ScenarioConfig, out: &Path) -> Result<Vec<IdentityEntry>> {
    let g = grid(cfg)?;
    let tg = time_grid(cfg)?;
    let l = Layout::extended(&ComplexOps::build(&g)?);
    let (prefix, anchor) = match cfg.system.kind {
        SystemKind::Gem => ("transfer_check/gem", anchor::GEM),
        _ => ("transfer_check/extended_maxwell", anchor::TRANSFER),
    };
    let f = build_source(cfg, l.total(), &tg)?;
    let weight = match extended_weight(&cfg.material, &l) {
        Ok(w) => w,
        Err(e) => return Ok(vec![IdentityEntry::failed(format!("{prefix}/weight"), anchor, 0.0, &e)]),
    };
    let pair = match cfg.system.kind {
        SystemKind::Gem => TransferPair::gem(&weight, &g),
        _ => TransferPair::extended_maxwell(&weight, &g),
    };
    let mut v = match &pair {
        Ok(p) => checks::transfer_entries(prefix, anchor, p, &f, &tg)
            .unwrap_or_else(|e| vec![IdentityEntry::failed(format!("{prefix}/transfer"), anchor, checks::TRANSFER_TOL, &e)]),
        Err(e) => vec![IdentityEntry::failed(format!("{prefix}/pair"), anchor, checks::TRANSFER_TOL, e)],
    };
    if cfg.system.kind == SystemKind::Extended {
        let mut g_seq = f.effective(tg.tau);
        checks::zero_scalar_slots(&mut g_seq, &l);
        v.extend(checks::block_reduction_entries(prefix, &weight, &g, &SourceTerm::from_samples(g_seq), &tg));
    }
    if let Ok(p) = &pair {
        let reduced = p.to_reduced_rhs(&f, &tg)?;
        let back = p.to_full_rhs(&reduced, &tg)?;
        let full = f.effective(tg.tau);
        let red = reduced.effective(tg.tau);
        let bk = back.effective(tg.tau);
        let mut w = csv::Writer::from_path(out.join("transfer.csv")).map_err(|e| Error::Io(e.to_string()))?;
        w.write_record(["t", "norm_full", "norm_reduced", "round_trip_error"]).map_err(|e| Error::Io(e.to_string()))?;
        for n in 0..tg.steps {
            let row = [
                tg.time(n),
                sparse::norm(&full[n], g.cell_volume()),
                sparse::norm(&red[n], g.cell_volume()),
                sparse::max_abs_diff(&bk[n], &full[n]),
            ];
            w.write_record(row.iter().map(|x| format!("{x:.17e}"))).map_err(|e| Error::Io(e.to_string()))?;
        }
        w.flush()?;
    }
    Ok(v)
}

fn potential_scenario(cfg: &ScenarioConfig, out: &Path) -> Result<Vec<IdentityEntry>> {
    let g = grid(cfg)?;
    let tg = time_grid(cfg)?;
    let n = cfg.potential.scenarios as u64;
    let seeds: Vec<u64> = (0..n).map(|i| cfg.seed + i).collect();
    let neg = cfg.potential.negative_control.then_some(cfg.seed + n);
    let entries = checks::potentials_on(&g, &tg, &seeds, neg);
    let mut w = csv::Writer::from_path(out.join("potential.csv")).map_err(|e| Error::Io(e.to_string()))?;
    w.write_record(["seed", "admissible", "clause_a", "clause_b", "clause_c", "range_residual"])
        .map_err(|e| Error::Io(e.to_string()))?;
    let cell = |name: &str| {
        entries
            .iter()
            .find(|e| e.name.ends_with(name))
            .and_then(|e| e.residual)
            .map_or(String::new(), |r| format!("{r:.17e}"))
    };
    for s in &seeds {
        w.write_record([
            s.to_string(),
            "true".into(),
            cell(&format!("seed{s}/clause_a")),
            cell(&format!("seed{s}/clause_b")),
            cell(&format!("seed{s}/clause_c")),
            cell(&format!("seed{s}/range_check")),
        ])
        .map_err(|e| Error::Io(e.to_string()))?;
    }
    if let Some(s) = neg {
        w.write_record([
            s.to_string(),
            "false".into(),
            cell(&format!("seed{s}/clause_a_fails")),
            String::new(),
            String::new(),
            String::new(),
        ])
        .map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(entries)
}

fn md_scenario(cfg: &ScenarioConfig, out: &Path) -> Result<Vec<IdentityEntry>> {
    let g = grid(cfg)?;
    let md = &cfg.maxwell_dirac;
    let init = checks::md_initial(&g, md.data_norm, cfg.seed)?;
    let coupling = Coupling::standard(md.alpha_k)?;
    let picard = PicardConfig {
        tol: md.picard_tol,
        max_iter: md.picard_max,
    };
    let final_time = cfg.time.tau * cfg.time.steps as f64;
    let (entries, trajs) = checks::maxwell_dirac_entries(&g, &init, &coupling, cfg.time.tau, final_time, md.levels, picard)?;
    let t = trajs.last().expect("at least one level");
    let (series, _) = crate::maxwell_dirac::charge_residual(t, &g)?;
    let q = t.total_charge();
    let mut w = csv::Writer::from_path(out.join("charge.csv")).map_err(|e| Error::Io(e.to_string()))?;
    w.write_record(["t", "charge_residual", "total_charge", "picard_iterations", "contraction"])
        .map_err(|e| Error::Io(e.to_string()))?;
    for n in 0..t.tg.steps {
        w.write_record([
            format!("{:.17e}", t.tg.time(n)),
            if n == 0 { String::new() } else { format!("{:.17e}", series[n - 1]) },
            format!("{:.17e}", q[n]),
            t.picard_iterations[n].to_string(),
            format!("{:.17e}", t.contraction[n]),
        ])
        .map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli::config::SystemConfig;
    use crate::evo::Integrator;

    #[test]
    fn list_has_six_lines() {
        assert_eq!(list_scenarios().lines().count(), 6);
    }

    #[test]
    fn zero_source_solve_has_zero_diagnostics() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ScenarioConfig::default_for(ScenarioKind::Solve);
        cfg.source = SourceConfig::Zero;
        cfg.system = SystemConfig {
            kind: SystemKind::Maxwell,
            integrator: Integrator::CrankNicolson,
        };
        let rep = run_config(&cfg, dir.path()).unwrap();
        assert!(rep.passed);
        let mut r = csv::Reader::from_path(dir.path().join("diagnostics.csv")).unwrap();
        let mut rows = 0;
        for rec in r.records() {
            let rec = rec.unwrap();
            for x in rec.iter().skip(1) {
                assert_eq!(x.parse::<f64>().unwrap(), 0.0);
            }
            rows += 1;
        }
        assert_eq!(rows, cfg.time.steps);
    }

    #[test]
    fn dump_round_trips_as_source() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ScenarioConfig::default_for(ScenarioKind::Solve);
        cfg.output.dump_fields = true;
        cfg.time.steps = 5;
        run_config(&cfg, dir.path()).unwrap();
        let mut cfg2 = cfg.clone();
        cfg2.source = SourceConfig::File {
            path: dir.path().join("fields.evof").to_string_lossy().into(),
        };
        cfg2.output.dump_fields = false;
        let d2 = tempfile::tempdir().unwrap();
        assert!(run_config(&cfg2, d2.path()).unwrap().passed);
    }

    #[test]
    fn non_block_weight_fails_transfer_check() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ScenarioConfig::default_for(ScenarioKind::TransferCheck);
        let mut m = vec![vec![0.0; 8]; 8];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 2.0;
        }
        m[0][1] = 0.5;
        m[1][0] = 0.5;
        cfg.material = MaterialConfig::Dense { matrix: m };
        let rep = run_config(&cfg, dir.path()).unwrap();
        assert!(!rep.passed);
        assert!(rep.failures().any(|e| e.name.contains("block_reduction")));
    }

    #[test]
    fn unit_transfer_check_passes() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ScenarioConfig::default_for(ScenarioKind::TransferCheck);
        cfg.time.steps = 10;
        let rep = run_config(&cfg, dir.path()).unwrap();
        assert!(rep.passed, "{:?}", rep.failures().collect::<Vec<_>>());
        assert!(dir.path().join("transfer.csv").exists());
    }
}
