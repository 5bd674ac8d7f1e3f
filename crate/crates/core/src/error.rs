use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("no consensus: best hypothesis had {inliers} inliers (need at least 3)")]
    NoConsensus { inliers: usize },

    #[error("insufficient overlap: {got} valid pixels, need {need}")]
    InsufficientOverlap { got: usize, need: usize },

    #[error("invalid pyramid: frame {width}x{height} is smaller than {min} for {levels} levels")]
    InvalidPyramid {
        width: usize,
        height: usize,
        levels: usize,
        min: usize,
    },

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("undefined metric: {0}")]
    UndefinedMetric(&'static str),

    #[error("size guard: {0}")]
    SizeGuard(String),

    #[error("config: {0}")]
    Config(String),

    #[error("format: {0}")]
    Format(String),

    #[error("frame {index}: {message}")]
    Frame { index: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
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
