use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid signal: {0}")]
    InvalidSignal(String),

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dense representation refused: N = {resolution} exceeds the cap {cap}")]
    DenseTooLarge { resolution: usize, cap: usize },

    #[error("source element is identically zero")]
    ZeroSource,

    #[error("power iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("degenerate certificate: {0}")]
    DegenerateCertificate(String),

    #[error("matrix is not negative semi-definite (largest eigenvalue {0:e})")]
    NotNegativeSemidefinite(f64),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}
