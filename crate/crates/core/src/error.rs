use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("invalid window [{lo}, {hi}]: lower bound must be below upper bound")]
    InvalidWindow { lo: i32, hi: i32 },
    #[error("invalid size {width}x{height}")]
    InvalidSize { width: usize, height: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("composite width {0} is odd")]
    OddWidth(usize),
    #[error("image dimensions {width}x{height} are not both even")]
    OddDimensions { width: usize, height: usize },
    #[error("expected 4 patches, got {0}")]
    PatchCountMismatch(usize),
    #[error("bad split ratios: {0}")]
    BadRatios(String),
    #[error("crop size {crop} exceeds load size {load}")]
    CropLargerThanLoad { load: usize, crop: usize },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("empty input")]
    EmptyInput,
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("dataset missing at {0}")]
    DatasetMissing(PathBuf),
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Coarse failure category, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Io,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidWindow { .. }
            | Error::InvalidSize { .. }
            | Error::BadRatios(_)
            | Error::CropLargerThanLoad { .. }
            | Error::ConfigInvalid(_) => ErrorKind::Config,
            Error::Io(_) => ErrorKind::Io,
            Error::Image(image::ImageError::IoError(_)) => ErrorKind::Io,
            _ => ErrorKind::Data,
        }
    }
}
