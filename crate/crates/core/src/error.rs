use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("malformed image data: {0}")]
    Malformed(String),

    #[error("image has zero width or height")]
    EmptyImage,

    #[error("expected {expected} channels, got {got}")]
    ChannelMismatch { expected: String, got: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("negative adjacency weight {weight} on edge ({i}, {j})")]
    NegativeWeight { i: usize, j: usize, weight: f64 },

    #[error("parameter vector is infeasible: {0}")]
    Infeasible(String),

    #[error("non-finite {what} at theta = {theta:?}")]
    NonFinite { what: &'static str, theta: Vec<f64> },

    #[error("eigendecomposition failed: {0}")]
    Eigen(String),

    #[error("degenerate gamut polygon: {0}")]
    DegenerateGamut(String),

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn channels(expected: impl Into<String>, got: usize) -> Self {
        Error::ChannelMismatch {
            expected: expected.into(),
            got,
        }
    }
}
