use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the numeric kernel, the optimizer and the data layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {what}: expected {expected}, found {found}")]
    Shape {
        what: String,
        expected: String,
        found: String,
    },
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("invalid config: {field}: {reason}")]
    InvalidConfig { field: String, reason: String },
    #[error("genome length mismatch: expected {expected}, found {found}")]
    GenomeLength { expected: usize, found: usize },
    #[error("empty tensor")]
    EmptyTensor,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("non-finite reward at child {0}")]
    NonFiniteReward(usize),
    #[error("evaluation of child {child} failed: {source}")]
    Child {
        child: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("empty split: {0}")]
    EmptySplit(String),
    #[error("manifest {path}, row {row}: {reason}")]
    Manifest {
        path: PathBuf,
        row: usize,
        reason: String,
    },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("decode: {0}")]
    Decode(String),
    #[error("unsupported checkpoint version {0}")]
    CheckpointVersion(u32),
    #[error("weight count mismatch: expected {expected}, found {found}")]
    WeightCount { expected: usize, found: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("sink: {0}")]
    Sink(String),
}

impl Error {
    pub(crate) fn shape(
        what: impl Into<String>,
        expected: impl ToString,
        found: impl ToString,
    ) -> Self {
        Error::Shape {
            what: what.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input or configuration rather than
    /// by the filesystem or runtime.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Io { .. } | Error::Sink(_) | Error::Format { .. } | Error::Decode(_) => false,
            Error::WeightCount { .. } | Error::CheckpointVersion(_) | Error::Json(_) => false,
            Error::Child { source, .. } => source.is_validation(),
            _ => true,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
