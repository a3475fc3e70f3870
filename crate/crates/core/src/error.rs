use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Pearson correlation requested for a zero-variance operand.
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("format error in {path}{}: {message}", offset.map(|o| format!(" at byte {o}")).unwrap_or_default())]
    Format {
        path: PathBuf,
        offset: Option<u64>,
        message: String,
    },

    #[error("unsupported container version {found:?} in {path}")]
    UnsupportedVersion { path: PathBuf, found: String },

    #[error("empty set: {0}")]
    EmptySet(String),

    #[error("manifest {path}: {}", problems.join("; "))]
    Manifest {
        path: PathBuf,
        problems: Vec<String>,
    },

    #[error("duplicate id {id:?}")]
    DuplicateId { id: String },

    #[error("empty distribution: {0}")]
    EmptyDistribution(String),

    #[error("{requested} comparisons exceeds the brute-force limit of {limit}; use max_correlations instead")]
    OverBudget { requested: u64, limit: u64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(
        path: impl Into<PathBuf>,
        offset: Option<u64>,
        message: impl Into<String>,
    ) -> Self {
        Error::Format {
            path: path.into(),
            offset,
            message: message.into(),
        }
    }

    /// True for errors caused by reading or decoding input files.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Format { .. }
                | Error::UnsupportedVersion { .. }
                | Error::Manifest { .. }
                | Error::DuplicateId { .. }
                | Error::Json(_)
        )
    }
}
