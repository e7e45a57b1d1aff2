use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("image must be at least {min}x{min}, got {height}x{width}")]
    TooSmall {
        height: usize,
        width: usize,
        min: usize,
    },

    #[error("buffer length {found} does not match {height}x{width}x{channels}")]
    BufferLength {
        height: usize,
        width: usize,
        channels: usize,
        found: usize,
    },

    #[error("non-finite sample at index {index}")]
    NonFinite { index: usize },

    #[error("expected 3 colour channels, got {0}")]
    ChannelCount(usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("burst has {len} frames; at least {min} are needed for a training triplet")]
    BurstTooShort { len: usize, min: usize },

    #[error("no flicker or identical phases: every frame pair has log-ratio spread below {threshold}")]
    NoFlicker { threshold: f64 },

    #[error("need at least {needed} frames, got {got}")]
    NotEnoughFrames { needed: usize, got: usize },

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

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("unsupported image format in {path}: {detail}")]
    UnsupportedFormat { path: PathBuf, detail: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
