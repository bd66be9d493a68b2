use thiserror::Error;

/// Broad classification used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Numerical,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("invalid covariance expression: {0}")]
    InvalidExpr(String),

    #[error("covariance expression has no free parameters")]
    NoFreeParameters,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not positive definite (jitter up to {jitter:e} tried)")]
    NotPositiveDefinite { jitter: f64 },

    #[error("all {restarts} optimizer restarts failed; last error: {last}")]
    FitFailed { restarts: usize, last: String },

    #[error("too few points in kernel support: {found} retained, {required} required")]
    TooFewPoints { found: usize, required: usize },

    #[error("zero total kernel weight at query {0}")]
    ZeroWeight(f64),

    #[error("degenerate local design at query {0}")]
    DegenerateDesign(f64),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("csv error at row {row}: {message}")]
    Csv { row: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::NotPositiveDefinite { .. }
            | Error::FitFailed { .. }
            | Error::ZeroWeight(_)
            | Error::DegenerateDesign(_)
            | Error::TooFewPoints { .. }
            | Error::Numerical(_) => ErrorKind::Numerical,
            Error::Io(_) => ErrorKind::Io,
            _ => ErrorKind::Validation,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
