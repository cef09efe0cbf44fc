//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the simulator, data loaders, and serializers.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter violated a documented precondition (non-finite value,
    /// too few levels, non-positive pitch, ...).
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    /// Two grids or fields that must share a shape did not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A field and a propagation plan (or two fields) disagree on grid
    /// geometry: dimensions, pitch, or wavelength.
    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    /// An IDX file started with the wrong magic number.
    #[error("idx: wrong magic {found:#010x}, expected {expected:#010x} in {path}")]
    IdxMagic {
        path: String,
        found: u32,
        expected: u32,
    },

    /// An IDX file ended before the payload promised by its header.
    #[error("idx: truncated file {path}: expected {expected} bytes of payload, found {found}")]
    IdxTruncated {
        path: String,
        expected: usize,
        found: usize,
    },

    /// Image and label IDX files disagree on the number of samples.
    #[error("idx: count mismatch: {images} images vs {labels} labels")]
    IdxCountMismatch { images: usize, labels: usize },

    /// A PGM file failed to parse.
    #[error("pgm: {0} in {1}")]
    MalformedPgm(String, String),

    /// A binary field dump or checkpoint failed to decode.
    #[error("format: {0}")]
    Format(String),

    /// An invalid training or schedule configuration.
    #[error("config: {0}")]
    Config(String),

    /// Underlying IO failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
