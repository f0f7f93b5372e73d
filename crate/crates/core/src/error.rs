use std::path::PathBuf;

use crate::estimation::CurvatureEstimate;
use crate::solver::RunTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A configuration value failed validation. `field` is a dotted path such
    /// as `schedule.alpha`.
    #[error("invalid configuration at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("empty estimate: {0}")]
    EmptyEstimate(String),

    /// The sample stream ran dry before the current round was filled.
    #[error("sample stream exhausted during round {round}; {} round(s) completed", completed.len())]
    PartialRounds {
        round: usize,
        completed: Vec<CurvatureEstimate>,
    },

    /// A step of a run failed. The trace recorded so far is kept for diagnostics.
    #[error("step {step} failed: {message}")]
    Step {
        step: usize,
        message: String,
        partial: Box<RunTrace>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category used in CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) | Error::DimensionMismatch { .. } => "argument",
            Error::Config { .. } => "config",
            Error::EmptyEstimate(_) | Error::PartialRounds { .. } => "estimation",
            Error::Step { .. } => "step",
            Error::Io { .. } | Error::Csv { .. } | Error::Json { .. } => "io",
        }
    }
}
