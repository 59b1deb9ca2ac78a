use std::path::PathBuf;
use thiserror::Error;

/// Errors surfaced by the pipeline library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("reader protocol error: {0}")]
    Protocol(String),

    #[error("dataset split error: {0}")]
    Split(String),

    #[error("SIJ localization failed: {0}")]
    Localization(String),

    #[error("crop error: {0}")]
    Crop(String),

    #[error("shape error: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("coordinate frame mismatch: {0}")]
    Frame(String),

    #[error("unknown layer: {0}")]
    UnknownLayer(String),

    #[error("schedule error: {0}")]
    Schedule(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing upstream artifact: {path} (run `{stage}` first)")]
    UpstreamMissing { path: PathBuf, stage: String },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
