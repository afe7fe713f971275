use std::path::PathBuf;

/// Errors produced by model ingestion, solvers and simulation.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("{name} is not symmetric (asymmetry {residual:e})")]
    NotSymmetric { name: &'static str, residual: f64 },
    #[error("{name} not {property} (smallest eigenvalue {margin:e})")]
    Definiteness {
        name: &'static str,
        property: &'static str,
        margin: f64,
    },
    #[error("empty sample set")]
    EmptySamples,
    #[error("sample {index} has length {found}, expected {expected}")]
    InconsistentSample {
        index: usize,
        found: usize,
        expected: usize,
    },
    #[error("penalty parameter must be positive and finite, got {0}")]
    InvalidPenalty(f64),
    #[error("penalty infeasible{}: lambda - max eig(Xi' P Xi) = {margin:e}", stage.map(|t| format!(" at stage {t}")).unwrap_or_default())]
    Feasibility { stage: Option<usize>, margin: f64 },
    #[error("numerically singular system (condition estimate {cond:e})")]
    Singular { cond: f64 },
    #[error("Riccati iteration did not converge after {iterations} iterations (last step {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("A is numerically singular (condition estimate {cond:e})")]
    SingularA { cond: f64 },
    #[error("pencil has an eigenvalue on the unit circle (|gamma| = {modulus})")]
    UnitCircleEigenvalue { modulus: f64 },
    #[error("stable invariant subspace is ill-conditioned (condition {cond:e})")]
    IllConditionedSubspace { cond: f64 },
    #[error("assumption violated: {0}")]
    Assumption(String),
    #[error("eigenvalue computation failed: {0}")]
    Eigen(String),
    #[error("stability certification failed: {0}")]
    Certification(String),
    #[error("upper bracket {hi} is infeasible")]
    BadBracket { hi: f64 },
    #[error("stage {stage} out of range 0..={horizon}")]
    StageOutOfRange { stage: usize, horizon: usize },
    #[error("support size mismatch: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error("exhaustive assignment limited to 8 points, got {0}")]
    TooManyPoints(usize),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

impl Error {
    /// True for errors caused by user input or an infeasible problem rather than an internal fault.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::Eigen(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
