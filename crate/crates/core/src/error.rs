use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, got {actual}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        actual: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("transmission {value} below floor {floor} at pixel {index}")]
    TransmissionBelowFloor { value: f64, floor: f64, index: usize },

    #[error("input {height}x{width} is smaller than the minimum {min_height}x{min_width} ({what})")]
    Undersized {
        what: &'static str,
        height: usize,
        width: usize,
        min_height: usize,
        min_width: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),

    #[error("dataset error ({id}): {reason}")]
    Dataset { id: String, reason: String },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("checkpoint config hash {found} does not match the current configuration {expected}; the checkpoint was produced by a different model configuration")]
    CheckpointConfig { found: String, expected: String },

    #[error("checkpoint truncated: {0}")]
    CheckpointTruncated(String),

    #[error("checkpoint integrity check failed: {0}")]
    CheckpointIntegrity(String),

    #[error("image codec error for {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("io error for {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            op,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the data (missing files, bad images, sizes) rather
    /// than by numerics or programming mistakes.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Dataset { .. }
                | Error::EmptyDataset(_)
                | Error::Image { .. }
                | Error::Io { .. }
                | Error::Undersized { .. }
                | Error::ShapeMismatch { .. }
                | Error::CheckpointVersion { .. }
                | Error::CheckpointConfig { .. }
                | Error::CheckpointTruncated(_)
                | Error::CheckpointIntegrity(_)
        )
    }

    pub fn is_numeric_error(&self) -> bool {
        matches!(self, Error::NonFinite(_))
    }
}
