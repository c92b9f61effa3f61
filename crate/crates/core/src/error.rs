//! Error type shared by every module of the crate.

use std::io;

/// Errors raised by grid, energy, model, sampler, metric and scene operations.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("invalid dimensions {height}x{width}")]
    InvalidDimensions { height: usize, width: usize },
    #[error("value count {found} does not match {height}x{width}")]
    LengthMismatch {
        height: usize,
        width: usize,
        found: usize,
    },
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("mask value {value} at index {index} is not 0 or 1")]
    NotBinary { index: usize, value: f64 },
    #[error("bad magic")]
    BadMagic,
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("dimension overflow: {height}x{width}")]
    DimensionOverflow { height: u64, width: u64 },
    #[error("trailing bytes after payload: {0}")]
    TrailingBytes(usize),
    #[error("no in-support attention inside the mask")]
    EmptySupport,
    #[error("layer selection is empty")]
    EmptySelection,
    #[error("invalid noise schedule: {0}")]
    InvalidSchedule(String),
    #[error("time step {t} outside 1..={max}")]
    StepOutOfRange { t: usize, max: usize },
    #[error("non-finite gradient at index {index}")]
    NonFiniteGradient { index: usize },
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
