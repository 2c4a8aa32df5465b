use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("frame dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),

    #[error("frame too small for edge detection: {0}x{1} (need at least 3x3)")]
    FrameTooSmall(usize, usize),

    #[error("front point ({accuracy}, {power_w} W) does not strictly dominate the reference point")]
    ReferenceNotDominated { accuracy: f64, power_w: f64 },

    #[error("configuration outside the online search box: threshold {threshold}, bitrate {bitrate_kbps} kbps")]
    OutOfBox { threshold: f64, bitrate_kbps: u32 },

    #[error("surrogate fit failed: {0}")]
    Surrogate(String),

    #[error("no kept frame at or before index {0}")]
    NoCarrySource(usize),

    #[error("window has no entries evaluated in round {0}")]
    NoCurrentRound(u64),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("protocol error: {message} (prefix: {prefix:?})")]
    Protocol { message: String, prefix: String },

    #[error("connection closed by peer")]
    ConnectionClosed,

    #[error("malformed {kind} in {path}: {message}")]
    Parse {
        kind: &'static str,
        path: PathBuf,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn parse(kind: &'static str, path: impl Into<PathBuf>, msg: impl ToString) -> Self {
        Error::Parse {
            kind,
            path: path.into(),
            message: msg.to_string(),
        }
    }
}
