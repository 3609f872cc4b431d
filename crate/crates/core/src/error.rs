use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Input outside the mathematical domain of an operation (non-finite values and the like).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// The surface tension matrix violates the triangle inequality beyond tolerance.
    #[error("metric violation: {0}")]
    Metric(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("normal equations are rank deficient (rank {rank} of {size}, condition {condition:.3e})")]
    RankDeficient {
        rank: usize,
        size: usize,
        condition: f64,
    },

    #[error("non-finite value in field at step {step}; last good checkpoint: {last_checkpoint:?}")]
    NonFinite {
        step: usize,
        last_checkpoint: Option<PathBuf>,
    },

    #[error("{path}:{line}: {message}")]
    Config {
        path: String,
        line: usize,
        message: String,
    },

    #[error("missing artifacts: {}", .0.join(", "))]
    MissingArtifacts(Vec<String>),

    #[error("format error: {0}")]
    Format(String),

    #[error("not supported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 2,
            Error::NonFinite { .. } => 3,
            Error::MissingArtifacts(_) => 4,
            _ => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
