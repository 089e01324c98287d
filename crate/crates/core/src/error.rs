use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("degenerate point set: {0}")]
    Degenerate(String),

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },

    #[error("missing dataset at {0}")]
    MissingDataset(PathBuf),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("malformed file {path}: {detail}")]
    Format { path: PathBuf, detail: String },

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
    /// Stable numeric code, shared by the CLI error JSON and the C ABI.
    pub fn code(&self) -> i32 {
        match self {
            Error::InvalidInput(_) => 1,
            Error::ShapeMismatch(_) => 2,
            Error::Degenerate(_) => 3,
            Error::NonFiniteLoss { .. } => 4,
            Error::MissingDataset(_) => 5,
            Error::Config(_) => 6,
            Error::Format { .. } => 7,
            Error::Io { .. } => 8,
            Error::Json(_) => 9,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::Degenerate(_) => "degenerate",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::MissingDataset(_) => "missing_dataset",
            Error::Config(_) => "config",
            Error::Format { .. } => "format",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }
}
