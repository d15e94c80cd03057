use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("non-finite loss at scale {scale}, iteration {iteration}: {snapshot}")]
    NonFinite {
        scale: usize,
        iteration: usize,
        snapshot: String,
    },
    #[error("checkpoint error: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("numerical error: {0}")]
    Numerical(String),
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("digest mismatch for {0}")]
    DigestMismatch(PathBuf),
    #[error("{0} is truncated")]
    Truncated(PathBuf),
    #[error("{path} has a bad header: {reason}")]
    BadHeader { path: PathBuf, reason: String },
    #[error("manifest is invalid: {0}")]
    Manifest(String),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
