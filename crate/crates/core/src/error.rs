use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("binary scene format error at byte {offset}: {message}")]
    BinaryFormat { offset: usize, message: String },

    #[error("invalid scene: {0}")]
    Validation(String),

    #[error("unknown material label {0}")]
    UnknownMaterial(u32),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("tap grid mismatch: simulated {simulated} taps, ground truth {ground_truth}")]
    GridMismatch {
        simulated: usize,
        ground_truth: usize,
    },

    #[error("ground-truth channel has zero energy")]
    ZeroGroundTruth,
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
