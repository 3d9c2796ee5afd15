use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible shapes, out-of-range axes, non-positive output extents.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Misuse of the tape or another API contract.
    #[error("contract error: {0}")]
    Contract(String),

    /// Semantically invalid input values.
    #[error("input error: {0}")]
    Input(String),

    #[error("degenerate conditional: AU {au} has no {kind} samples and smoothing is 0")]
    DegenerateConditional { au: usize, kind: &'static str },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("header error in {path}: {msg}")]
    Header { path: String, msg: String },

    #[error("invalid synthetic spec: {0}")]
    Spec(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    Divergence {
        epoch: usize,
        step: usize,
        detail: String,
    },

    #[error("refusing to write into non-empty directory {0} (use --force)")]
    OutputExists(PathBuf),

    #[error("bad tensor file: {0}")]
    TensorFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}
