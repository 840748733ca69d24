//! Scenario configuration: TOML, unknown keys rejected.

use serde::{Deserialize, Serialize};

use crate::evo::{Integrator, FIELD_DUMP_MAGIC};
use crate::grid::{Backend, GridSpec};
use crate::material::Profile;
use crate::transfer::SystemKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Solve,
    TransferCheck,
    DiracEquivalence,
    PotentialReconstruction,
    MaxwellDirac,
    IdentitySuite,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 6] = [
        ScenarioKind::Solve,
        ScenarioKind::TransferCheck,
        ScenarioKind::DiracEquivalence,
        ScenarioKind::PotentialReconstruction,
        ScenarioKind::MaxwellDirac,
        ScenarioKind::IdentitySuite,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Solve => "solve",
            ScenarioKind::TransferCheck => "transfer_check",
            ScenarioKind::DiracEquivalence => "dirac_equivalence",
            ScenarioKind::PotentialReconstruction => "potential_reconstruction",
            ScenarioKind::MaxwellDirac => "maxwell_dirac",
            ScenarioKind::IdentitySuite => "identity_suite",
        }
    }

    pub fn summary(self) -> &'static str {
        match self {
            ScenarioKind::Solve => "time-step one system and write per-step diagnostics",
            ScenarioKind::TransferCheck => "right-hand-side transfer between a system and its reduction",
            ScenarioKind::DiracEquivalence => "unitary equivalence of Dirac and extended Maxwell operators",
            ScenarioKind::PotentialReconstruction => "potentials from Maxwell fields via the extended system",
            ScenarioKind::MaxwellDirac => "coupled Maxwell-Dirac run with charge residual under tau halving",
            ScenarioKind::IdentitySuite => "every identity check at the configured sizes",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub time: TimeConfig,
    #[serde(default)]
    pub system: SystemConfig,
    #[serde(default)]
    pub material: MaterialConfig,
    #[serde(default)]
    pub source: SourceConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub potential: PotentialConfig,
    #[serde(default)]
    pub maxwell_dirac: MdConfig,
    #[serde(default)]
    pub suite: SuiteConfig,
}

fn default_output_dir() -> String {
    "evomax-out".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub backend: Backend,
    pub n: [usize; 3],
    pub h: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Periodic,
            n: [3, 3, 3],
            h: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub tau: f64,
    pub steps: usize,
    pub nu: f64,
}

impl Default for TimeConfig {
    fn default() -> Self {
        Self {
            tau: 0.05,
            steps: 40,
            nu: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub kind: SystemKind,
    pub integrator: Integrator,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            kind: SystemKind::Extended,
            integrator: Integrator::ImplicitEuler,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MaterialConfig {
    /// Unit law (Maxwell) or unit weight (extended, GEM).
    #[default]
    Identity,
    /// Maxwell only: `M0 = diag(eps, mu)`, `M1 = diag(sigma, 0)`.
    Diagonal { eps: Profile, mu: Profile, sigma: Profile },
    /// Maxwell only: `M0 = diag(0, mu)`, `M1 = diag(sigma, 0)`.
    EddyCurrent { sigma: Profile, mu: Profile },
    /// Extended: `diag(e00, middle, e33)` with a 6x6 middle block.
    BlockStructured { e00: f64, middle: Vec<Vec<f64>>, e33: f64 },
    /// Extended: a constant 8x8 weight; GEM system: a constant 7x7 weight.
    Dense { matrix: Vec<Vec<f64>> },
    /// Extended weight `[[C, (0,0,S)], [(0,0,S)^T, K]]` with constant 7x7 `C`.
    Gem { c: Vec<Vec<f64>>, k: f64, s: [f64; 3] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceConfig {
    Zero,
    /// Uniform random samples in `[-amplitude, amplitude]` from `start_step` on.
    Random { amplitude: f64, start_step: usize },
    /// Random initial state injected as a δ-impulse at step 0.
    Impulse { amplitude: f64 },
    /// `amplitude * exp(-((t - center) / width)^2)` times a random profile.
    GaussianPulse { amplitude: f64, center: f64, width: f64 },
    /// Samples read from a field dump.
    File { path: String },
}

impl Default for SourceConfig {
    fn default() -> Self {
        SourceConfig::Random {
            amplitude: 1.0,
            start_step: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dump_fields: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialConfig {
    pub scenarios: usize,
    pub negative_control: bool,
}

impl Default for PotentialConfig {
    fn default() -> Self {
        Self {
            scenarios: 5,
            negative_control: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdConfig {
    pub alpha_k: [f64; 3],
    pub data_norm: f64,
    pub picard_tol: f64,
    pub picard_max: usize,
    pub levels: usize,
}

impl Default for MdConfig {
    fn default() -> Self {
        Self {
            alpha_k: [0.3, -0.2, 0.5],
            data_norm: 1e-3,
            picard_tol: 1e-10,
            picard_max: 50,
            levels: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    pub sizes: Vec<usize>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self { sizes: vec![2, 3, 4] }
    }
}

/// Schema violation: the offending key and what is wrong with it.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config key `{}`: {}", self.key, self.message)
    }
}

fn err<T>(key: &str, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError {
        key: key.into(),
        message: message.into(),
    })
}

fn check_square(key: &str, m: &[Vec<f64>], n: usize) -> Result<(), ConfigError> {
    if m.len() != n || m.iter().any(|r| r.len() != n) {
        return err(key, format!("expected a {n}x{n} matrix"));
    }
    if m.iter().flatten().any(|x| !x.is_finite()) {
        return err(key, "entries must be finite");
    }
    Ok(())
}

fn check_profile(key: &str, p: &Profile) -> Result<(), ConfigError> {
    let ok = match *p {
        Profile::Constant { value } => value.is_finite(),
        Profile::TwoRegion { inside, outside, split } => inside.is_finite() && outside.is_finite() && (0.0..=1.0).contains(&split),
    };
    if ok {
        Ok(())
    } else {
        err(key, "profile values must be finite and split in [0, 1]")
    }
}

impl ScenarioConfig {
    /// Defaults, with a bounded grid where the scenario needs one.
    pub fn default_for(scenario: ScenarioKind) -> Self {
        let grid = match scenario {
            ScenarioKind::PotentialReconstruction => GridConfig {
                backend: Backend::BoundedStaggered,
                ..GridConfig::default()
            },
            _ => GridConfig::default(),
        };
        Self {
            scenario,
            seed: 0,
            output_dir: default_output_dir(),
            grid,
            time: TimeConfig::default(),
            system: SystemConfig::default(),
            material: MaterialConfig::default(),
            source: SourceConfig::default(),
            output: OutputConfig::default(),
            potential: PotentialConfig::default(),
            maxwell_dirac: MdConfig::default(),
            suite: SuiteConfig::default(),
        }
    }

    /// Parse TOML and validate; unknown keys are rejected by name.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError {
            key: offending_key(&e),
            message: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn grid_spec(&self) -> Result<GridSpec, ConfigError> {
        GridSpec::new(self.grid.backend, self.grid.n, self.grid.h).or_else(|e| err("grid", e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.grid_spec()?;
        let t = &self.time;
        if !(t.tau.is_finite() && t.tau > 0.0) {
            return err("time.tau", "must be positive");
        }
        if t.steps == 0 {
            return err("time.steps", "must be at least 1");
        }
        if !(t.nu.is_finite() && t.nu > 0.0) {
            return err("time.nu", "must be positive");
        }
        let periodic = self.grid.backend == Backend::Periodic;
        match &self.material {
            MaterialConfig::Identity => {}
            MaterialConfig::Diagonal { eps, mu, sigma } => {
                check_profile("material.eps", eps)?;
                check_profile("material.mu", mu)?;
                check_profile("material.sigma", sigma)?;
            }
            MaterialConfig::EddyCurrent { sigma, mu } => {
                check_profile("material.sigma", sigma)?;
                check_profile("material.mu", mu)?;
            }
            MaterialConfig::BlockStructured { middle, e00, e33 } => {
                check_square("material.middle", middle, 6)?;
                if !(e00.is_finite() && e33.is_finite()) {
                    return err("material.e00", "must be finite");
                }
            }
            MaterialConfig::Dense { matrix } => {
                let n = if self.system.kind == SystemKind::Gem { 7 } else { 8 };
                check_square("material.matrix", matrix, n)?;
            }
            MaterialConfig::Gem { c, k, s } => {
                check_square("material.c", c, 7)?;
                if !k.is_finite() || s.iter().any(|x| !x.is_finite()) {
                    return err("material.k", "K and S must be finite");
                }
            }
        }
        let maxwell_only = matches!(self.material, MaterialConfig::Diagonal { .. } | MaterialConfig::EddyCurrent { .. });
        if maxwell_only && self.system.kind != SystemKind::Maxwell {
            return err("material.kind", "diagonal and eddy_current laws need system.kind = \"maxwell\"");
        }
        let extended_only = matches!(self.material, MaterialConfig::BlockStructured { .. } | MaterialConfig::Gem { .. });
        if extended_only && self.system.kind == SystemKind::Maxwell {
            return err("material.kind", "weights need system.kind = \"extended\" or \"gem\"");
        }
        match &self.source {
            SourceConfig::Random { amplitude, start_step } => {
                if !amplitude.is_finite() {
                    return err("source.amplitude", "must be finite");
                }
                if *start_step >= t.steps {
                    return err("source.start_step", "must lie on the time grid");
                }
            }
            SourceConfig::Impulse { amplitude } if !amplitude.is_finite() => return err("source.amplitude", "must be finite"),
            SourceConfig::GaussianPulse { amplitude, center, width } => {
                if !(amplitude.is_finite() && center.is_finite() && width.is_finite() && *width > 0.0) {
                    return err("source.width", "amplitude and center must be finite, width positive");
                }
            }
            SourceConfig::File { path } if path.is_empty() => return err("source.path", "must not be empty"),
            _ => {}
        }
        match self.scenario {
            ScenarioKind::TransferCheck if self.system.kind == SystemKind::Maxwell => {
                return err("system.kind", "transfer_check runs on \"extended\" or \"gem\"");
            }
            ScenarioKind::DiracEquivalence | ScenarioKind::MaxwellDirac if !periodic => {
                return err("grid.backend", "this scenario needs the periodic backend");
            }
            ScenarioKind::PotentialReconstruction if periodic => {
                return err("grid.backend", "potential reconstruction needs the bounded_staggered backend");
            }
            _ => {}
        }
        if self.system.kind == SystemKind::Gem && !periodic && !matches!(self.material, MaterialConfig::Identity) {
            return err("grid.backend", "GEM weights mix components and need the periodic backend");
        }
        if self.potential.scenarios == 0 {
            return err("potential.scenarios", "must be at least 1");
        }
        let md = &self.maxwell_dirac;
        if md.alpha_k.iter().any(|x| !x.is_finite()) {
            return err("maxwell_dirac.alpha_k", "must be finite");
        }
        if !(md.data_norm.is_finite() && md.data_norm >= 0.0) {
            return err("maxwell_dirac.data_norm", "must be nonnegative");
        }
        if !(md.picard_tol.is_finite() && md.picard_tol > 0.0) {
            return err("maxwell_dirac.picard_tol", "must be positive");
        }
        if md.picard_max == 0 {
            return err("maxwell_dirac.picard_max", "must be at least 1");
        }
        if !(1..=8).contains(&md.levels) {
            return err("maxwell_dirac.levels", "must be between 1 and 8");
        }
        if self.suite.sizes.is_empty() || self.suite.sizes.iter().any(|&n| !(2..=8).contains(&n)) {
            return err("suite.sizes", "sizes must be between 2 and 8");
        }
        if self.output_dir.is_empty() {
            return err("output_dir", "must not be empty");
        }
        Ok(())
    }
}

/// Key named in a TOML error: the unknown field if there is one, else the
/// table path of the span.
fn offending_key(e: &toml::de::Error) -> String {
    let msg = e.message();
    if let Some(rest) = msg.strip_prefix("unknown field `") {
        if let Some(end) = rest.find('`') {
            return rest[..end].to_string();
        }
    }
    if let Some(rest) = msg.strip_prefix("missing field `") {
        if let Some(end) = rest.find('`') {
            return rest[..end].to_string();
        }
    }
    "<document>".into()
}

/// Published schema: documentation followed by a default-filled config.
pub fn schema_text() -> String {
    let mut s = String::new();
    s.push_str(
        "# evomax scenario configuration (TOML). Unknown keys are rejected.\n\
         #\n\
         # scenario      one of: solve, transfer_check, dirac_equivalence,\n\
         #               potential_reconstruction, maxwell_dirac, identity_suite (required)\n\
         # seed          u64, the only source of randomness (default 0)\n\
         # output_dir    directory for artifacts (default \"evomax-out\");\n\
         #               the EVOMAX_OUTPUT_DIR environment variable overrides it\n\
         # [grid]        backend = periodic | bounded_staggered; n = [nx, ny, nz]; h > 0\n\
         #               periodic needs n >= 2, bounded_staggered n >= 3 per direction\n\
         # [time]        tau > 0, steps >= 1, nu > 0 (exponential weight)\n\
         # [system]      kind = maxwell | extended | gem;\n\
         #               integrator = implicit_euler | crank_nicolson | exponential\n\
         # [material]    kind = identity\n\
         #               kind = diagonal, eps/mu/sigma = profile (maxwell)\n\
         #               kind = eddy_current, sigma/mu = profile (maxwell)\n\
         #               kind = block_structured, e00, middle (6x6), e33 (extended)\n\
         #               kind = dense, matrix (8x8 extended, 7x7 gem)\n\
         #               kind = gem, c (7x7), k, s = [s1, s2, s3] (extended weight)\n\
         #               profile = { profile = \"constant\", value = v } or\n\
         #                         { profile = \"two_region\", inside = a, outside = b, split = s }\n\
         #               weights that mix components need the periodic backend\n\
         # [source]      kind = zero | random (amplitude, start_step) | impulse (amplitude)\n\
         #               | gaussian_pulse (amplitude, center, width) | file (path to a field dump)\n\
         # [output]      dump_fields = bool: write fields.evof\n\
         # [potential]   scenarios >= 1, negative_control = bool\n\
         # [maxwell_dirac] alpha_k = [a1, a2, a3], data_norm, picard_tol, picard_max,\n\
         #               levels = number of tau halvings + 1\n\
         # [suite]       sizes = list of cube sizes in 2..=8\n\
         #\n",
    );
    s.push_str(&format!(
        "# Field dumps: one ASCII header line\n\
         #   {FIELD_DUMP_MAGIC} <ncomponents> <dofs> <nsteps> little-endian f64\n\
         # followed by nsteps * dofs raw little-endian f64 values, step-major.\n\
         #\n\
         # Exit codes: 0 all checks pass, 1 a check failed or the run errored,\n\
         # 2 the configuration violates this schema.\n\n"
    ));
    s.push_str(&ScenarioConfig::default_for(ScenarioKind::Solve).to_toml());
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_round_trips() {
        let text = schema_text();
        assert!(text.contains("EVOF1"));
        let cfg = ScenarioConfig::from_toml(&text).unwrap();
        assert_eq!(cfg, ScenarioConfig::default_for(ScenarioKind::Solve));
    }

    #[test]
    fn every_scenario_default_validates() {
        for k in ScenarioKind::ALL {
            let cfg = ScenarioConfig::default_for(k);
            assert_eq!(ScenarioConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        }
    }

    #[test]
    fn unknown_key_is_named() {
        let e = ScenarioConfig::from_toml("scenario = \"solve\"\n[grid]\nbackend = \"periodic\"\nn = [3,3,3]\nh = 1.0\nspacing = 2\n").unwrap_err();
        assert_eq!(e.key, "spacing");
        let e = ScenarioConfig::from_toml("scenario = \"solve\"\ncolour = 1\n").unwrap_err();
        assert_eq!(e.key, "colour");
    }

    #[test]
    fn validation_names_keys() {
        let mut c = ScenarioConfig::default_for(ScenarioKind::Solve);
        c.time.tau = 0.0;
        assert_eq!(c.validate().unwrap_err().key, "time.tau");
        let mut c = ScenarioConfig::default_for(ScenarioKind::Solve);
        c.material = MaterialConfig::EddyCurrent {
            sigma: Profile::constant(1.0),
            mu: Profile::constant(1.0),
        };
        assert_eq!(c.validate().unwrap_err().key, "material.kind");
        let mut c = ScenarioConfig::default_for(ScenarioKind::MaxwellDirac);
        c.grid.backend = Backend::BoundedStaggered;
        assert_eq!(c.validate().unwrap_err().key, "grid.backend");
        let mut c = ScenarioConfig::default_for(ScenarioKind::Solve);
        c.grid.n = [1, 3, 3];
        assert_eq!(c.validate().unwrap_err().key, "grid");
    }

    #[test]
    fn six_scenarios() {
        let names: Vec<_> = ScenarioKind::ALL.iter().map(|k| k.name()).collect();
        assert_eq!(names.len(), 6);
        for n in names {
            let parsed: ScenarioKind = serde_json::from_str(&format!("\"{n}\"")).unwrap();
            assert_eq!(parsed.name(), n);
        }
    }
}
