use std::path::PathBuf;

use thiserror::Error;

/// Everything that can go wrong inside the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("backward called on layer without a cached forward pass")]
    NoCachedForward,

    #[error("non-finite gradient in layer {layer} (max |grad| = {max_abs_grad})")]
    NonFiniteGradient { layer: usize, max_abs_grad: f64 },

    #[error("non-finite parameter in layer {layer} after update")]
    NonFiniteParameter { layer: usize },

    #[error("non-finite loss at batch {batch}")]
    NonFiniteLoss { batch: usize },

    #[error("label {label} out of range for {classes} classes (item {index})")]
    LabelOutOfRange { label: usize, index: usize, classes: usize },

    #[error(transparent)]
    Idx(#[from] IdxError),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unsupported conditioning mode for {task}: {mode}")]
    UnsupportedMode { task: &'static str, mode: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint version mismatch: found {found}, expected {expected}")]
    CheckpointVersion { found: u8, expected: u8 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Structured IDX container errors.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IdxError {
    #[error("BadMagic(found 0x{found:08x}, expected 0x{expected:08x})")]
    BadMagic { found: u32, expected: u32 },

    #[error("TruncatedFile(expected {expected} bytes, got {got})")]
    TruncatedFile { expected: usize, got: usize },

    #[error("TrailingBytes({count})")]
    TrailingBytes { count: usize },

    #[error("LabelOutOfRange(value {value}, index {index})")]
    LabelOutOfRange { value: u8, index: usize },

    #[error("image/label count mismatch: {images} images, {labels} labels")]
    CountMismatch { images: usize, labels: usize },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
