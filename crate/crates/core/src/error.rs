use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum OreoError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("zero-norm vector: {0}")]
    ZeroNorm(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("manifest row {row}: image {path:?}: {reason}")]
    ManifestRow {
        row: usize,
        path: PathBuf,
        reason: String,
    },

    #[error("manifest parse error: {0}")]
    ManifestParse(String),

    #[error("bad file format in {path:?}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("training diverged at step {step}: loss = {value}")]
    Diverged { step: usize, value: f64 },

    #[error("i/o error on {path:?}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl OreoError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        OreoError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by user input rather than by the program.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, OreoError::Diverged { .. } | OreoError::NonFinite(_))
    }
}

pub type Result<T> = std::result::Result<T, OreoError>;
