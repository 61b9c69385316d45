use thiserror::Error;

/// Errors raised across the simulation and bound evaluators.
#[derive(Debug, Error)]
pub enum Error {
    #[error("Dalang's condition fails for {kind} covariance in dimension {dimension}")]
    DalangViolation { kind: &'static str, dimension: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("explicit scheme unstable: dt = {dt} exceeds dx^2/(2d) = {limit}")]
    Unstable { dt: f64, limit: f64 },

    #[error("solver blow-up in replica {replica} at step {step}: |u| = {value}")]
    SolverBlowup { replica: u64, step: usize, value: f64 },

    #[error("Picard iteration failed to contract after {iterations} iterations (last sup-diffs {diffs:?})")]
    NonConvergence { iterations: usize, diffs: Vec<f64> },

    #[error("support of the scaled test function `{psi}` does not fit the grid: {detail}")]
    SupportOverflow { psi: String, detail: String },

    #[error("lag cutoff too small: boundary covariance {boundary:.3e} exceeds 5% of estimate {estimate:.3e}")]
    CutoffTooSmall { boundary: f64, estimate: f64 },

    #[error("non-degeneracy conditions do not apply: {0}")]
    ConditionNotApplicable(String),

    #[error("degenerate variance {0}")]
    DegenerateVariance(f64),

    #[error("discretization spacing {spacing:.4e} exceeds min(r)/4 = {limit:.4e}")]
    ResolutionTooCoarse { spacing: f64, limit: f64 },

    #[error("not enough samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name: name.to_string(),
        reason: reason.into(),
    }
}
