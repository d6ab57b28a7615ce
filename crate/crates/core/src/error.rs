use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },

    #[error(
        "vector out of bounds for record {record_id}: offset {offset} + dim {dim} exceeds {available} elements"
    )]
    VectorOutOfBounds {
        record_id: String,
        offset: usize,
        dim: usize,
        available: usize,
    },

    #[error("duplicate record_id {0}")]
    DuplicateRecord(String),

    #[error("{modality} record {record_id} has dim {found}, expected {expected}")]
    ModalityDimMismatch {
        record_id: String,
        modality: String,
        expected: usize,
        found: usize,
    },

    #[error("invalid record {record_id}: {reason}")]
    InvalidRecord { record_id: String, reason: String },

    #[error("traits line {line}: {reason}")]
    Traits { line: usize, reason: String },

    #[error("split: {0}")]
    Split(String),

    #[error("audio: {0}")]
    Audio(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("evaluation: {0}")]
    Eval(String),

    #[error("study: {0}")]
    Study(String),
}

/// Coarse failure category, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Training,
    Io,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } => ErrorKind::Io,
            Error::Diverged { .. } | Error::NonFinite(_) => ErrorKind::Training,
            _ => ErrorKind::Validation,
        }
    }
}
