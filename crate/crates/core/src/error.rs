use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("unknown class identifier {0}")]
    UnknownClass(u32),

    #[error("bad .flo magic {0}")]
    BadMagic(f32),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("invalid dimensions {width}x{height}")]
    InvalidDimensions { width: i64, height: i64 },

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("flow component {0} px exceeds the 16-bit fixed-point range")]
    FlowOutOfRange(f32),

    #[error("degenerate region: {0}")]
    Degenerate(String),

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("invalid scene: {0}")]
    Scene(String),

    #[error("invalid report: {0}")]
    Report(String),

    #[error("no valid pixels to evaluate")]
    NoValidPixels,

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Decode { path: PathBuf, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn decode(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Decode {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
