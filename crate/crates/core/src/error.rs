use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("operation on an empty tensor")]
    EmptyTensor,
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("tensor is not recorded on this tape")]
    DetachedTensor,
    #[error("non-finite gradient: {0}")]
    NonFiniteGradient(String),
    #[error("value outside the domain of {op}: {value}")]
    Domain { op: &'static str, value: f64 },
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("max-pooling needs even spatial dims, got {h}x{w}")]
    OddSpatialDim { h: usize, w: usize },
    #[error("batch norm in train mode needs at least 2 values per channel, got {0}")]
    DegenerateBatch(usize),
    #[error("crop {out_h}x{out_w} larger than input {h}x{w}")]
    CropLargerThanInput {
        h: usize,
        w: usize,
        out_h: usize,
        out_w: usize,
    },
    #[error("depth {depth} too deep for {h}x{w} input (max admissible depth {max})")]
    DepthTooDeep {
        h: usize,
        w: usize,
        depth: usize,
        max: usize,
    },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("focal gamma must be non-negative, got {0}")]
    NegativeGamma(f64),
    #[error("mask is not binary: found value {0}")]
    NonBinaryMask(f64),
    #[error("epoch {epoch} outside schedule of {total} epochs")]
    EpochOutOfRange { epoch: usize, total: usize },
    #[error("format error: {0}")]
    Format(String),
    #[error("unsupported checkpoint version {0}")]
    VersionUnsupported(u32),
    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("image/mask dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("data error: {0}")]
    Data(String),
    #[error("loss diverged (non-finite) in epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_)
            | Error::NegativeGamma(_)
            | Error::DepthTooDeep { .. }
            | Error::EpochOutOfRange { .. } => 2,
            Error::DivergedLoss { .. } => 4,
            _ => 3,
        }
    }
}
