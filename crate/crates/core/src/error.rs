use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape {shape:?} needs {} elements, got {len}", shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("cannot reshape {from:?} into {to:?}")]
    Reshape { from: Vec<usize>, to: Vec<usize> },
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("{op}: {msg}")]
    Usage { op: &'static str, msg: String },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SysgenError {
    #[error("invalid class configuration: {0}")]
    Config(String),
    #[error("realization failed after {attempts} attempts: {reason}")]
    Realization { attempts: usize, reason: String },
    #[error("non-finite input at step {0}")]
    Input(usize),
    #[error("non-finite output at step {0}")]
    Numeric(usize),
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic bytes {0:?}")]
    Magic([u8; 4]),
    #[error("unsupported format version {0}")]
    Version(u32),
    #[error("file truncated while reading {0}")]
    Truncated(String),
    #[error("invalid {field}: {msg}")]
    Invalid { field: String, msg: String },
    #[error("config blob: {0}")]
    Config(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Top-level error for model, training and evaluation code.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Sysgen(#[from] SysgenError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
