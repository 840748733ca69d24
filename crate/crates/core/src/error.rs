use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("{op}: operation requires the {expected} backend")]
    WrongBackend { op: &'static str, expected: &'static str },

    #[error("{op}: dimension mismatch between {left} and {right}")]
    DimensionMismatch {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("{op}: layout mismatch ({detail})")]
    LayoutMismatch { op: &'static str, detail: String },

    #[error("{op}: block tag {tag} is not supported here")]
    UnsupportedTag { op: &'static str, tag: String },

    #[error("matrix at point {point} is not symmetric (max |M - M^T| = {asymmetry:e})")]
    NotSymmetric { point: usize, asymmetry: f64 },

    #[error("matrix at point {point} is not positive definite (min eigenvalue {min_eig:e})")]
    NotPositiveDefinite { point: usize, min_eig: f64 },

    #[error("hypothesis H1 violated: max |M0 - M0^T| = {asymmetry:e}")]
    SelfAdjointnessViolated { asymmetry: f64 },

    #[error("hypothesis H2 violated at point {point}: eigenvalue {eigenvalue:e} of nu*M0 + sym(M1)")]
    CoercivityViolated { point: usize, eigenvalue: f64 },

    #[error("invalid material coefficients: {0}")]
    InvalidMaterial(String),

    #[error("Schur complement K - S^T C^-1 S not positive at point {point} (value {value:e})")]
    SchurViolated { point: usize, value: f64 },

    #[error("weight on the staggered backend must be a per-dof positive field, got a component-mixing weight")]
    MixingWeightOnStaggered,

    #[error("invalid time grid: {0}")]
    InvalidTimeGrid(String),

    #[error("invalid source term: {0}")]
    InvalidSource(String),

    #[error("singular step matrix: {0}")]
    SingularStep(String),

    #[error("linear solve failed at step {step}: relative residual {residual:e}")]
    SolverBreakdown { step: usize, residual: f64 },

    #[error("dense propagator limited to {limit} unknowns, got {dim}")]
    TooLarge { dim: usize, limit: usize },

    #[error("causality violated: first nonzero state at step {step} (|U| = {norm:e}) before support start {start}")]
    CausalityViolated { step: usize, start: usize, norm: f64 },

    #[error("coupling matrix check failed: {0}")]
    Coupling(String),

    #[error("Picard iteration did not converge at step {step} (last increment {increment:e}, contraction {contraction:e})")]
    PicardDiverged {
        step: usize,
        increment: f64,
        contraction: f64,
    },

    #[error("admissibility violated: {0}")]
    Admissibility(String),

    #[error("identity check failed: {0}")]
    Identity(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
