use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e}, tolerance {tolerance:e})")]
    Asymmetric { asymmetry: f64, tolerance: f64 },

    #[error("eigensolver did not converge within {0} iterations")]
    Convergence(usize),

    #[error("{which} input is rank deficient")]
    RankDeficient { which: &'static str },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    Divergence { epoch: usize, reason: String },

    #[error("diagnostic failed: {0}")]
    Diagnostic(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for failures caused by the numerics rather than by the caller's
    /// configuration or files.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Convergence(_) | Error::Divergence { .. } | Error::RankDeficient { .. } | Error::Diagnostic(_)
        )
    }
}
