use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions {width}x{height}")]
    InvalidDimensions { width: usize, height: usize },

    #[error("data length {len} does not match {width}x{height}")]
    DataLength { width: usize, height: usize, len: usize },

    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("intensity {value} at index {index} is outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },

    #[error("mask value {value} at index {index} is not binary")]
    NotBinary { index: usize, value: f64 },

    #[error("a mask set needs at least two masks, got {0}")]
    TooFewMasks(usize),

    #[error("count mismatch: expected {expected}, found {found}")]
    CountMismatch { expected: usize, found: usize },

    #[error("layer {layer} is nonzero outside its mask at index {index}")]
    LayerOffMask { layer: usize, index: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("correction parameter {0} is outside [{min}, 1]", min = crate::reconstruct::K_MIN)]
    InvalidCorrection(f64),

    #[error("region has pixels with no boundary data; the Laplace problem is unsolvable")]
    NoBoundary,

    #[error("Laplace solver did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("support is empty")]
    EmptySupport,

    #[error("input masks already overlap ({0} shared pixels)")]
    MasksOverlap(usize),

    #[error("synthesis failed: {0}")]
    Synthesis(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{}: unsupported raster: {reason}", path.display())]
    UnsupportedRaster { path: PathBuf, reason: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
