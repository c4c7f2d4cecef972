use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(&'static str),

    #[error("field has {got} values, grid expects {expected}")]
    Length { expected: usize, got: usize },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("kernel width eps={eps} is under-resolved (needs eps >= 2h = {min})")]
    UnderResolvedKernel { eps: f64, min: f64 },

    #[error("kernel width eps={eps} exceeds the half torus (max {max})")]
    KernelTooWide { eps: f64, max: f64 },

    #[error("time step tau={tau} violates the CFL bound {bound}")]
    CflViolation { tau: f64, bound: f64 },

    #[error("blow-up at step {step}: {reason}")]
    BlowUp { step: usize, reason: String },

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("malformed field dump: {0}")]
    Dump(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn problem(msg: impl Into<String>) -> Self {
        Error::InvalidProblem(msg.into())
    }

    /// True for failures of the numerical march itself, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::BlowUp { .. } | Error::NonFinite { .. })
    }
}
