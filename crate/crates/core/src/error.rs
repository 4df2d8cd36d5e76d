use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated payload while reading {0}")]
    Truncated(&'static str),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("frequencies are not strictly increasing at index {0}")]
    NonMonotoneFrequencies(usize),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("no grid direction within {tolerance_deg} deg of the horizontal plane")]
    NoHorizontalDirections { tolerance_deg: f64 },

    #[error("singular system at bin {bin} ({freq_hz} Hz)")]
    SingularSystem { bin: usize, freq_hz: f64 },
    #[error("degenerate power: {0}")]
    DegeneratePower(String),

    #[error("FIR length {taps} is too short (minimum {min})")]
    InsufficientTaps { taps: usize, min: usize },
    #[error("FIR length {0} is not a power of two")]
    InvalidTaps(usize),
    #[error("frequency grid mismatch: {0}")]
    GridMismatch(String),
    #[error("channel mismatch: expected {expected} channels, got {got}")]
    ChannelMismatch { expected: usize, got: usize },

    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("metadata: {0}")]
    Json(#[from] serde_json::Error),
    #[error("wave file: {0}")]
    Wav(#[from] hound::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    /// True for errors caused by malformed or inconsistent input data, as
    /// opposed to numerical breakdown.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::BadMagic { .. }
                | Error::UnsupportedVersion(_)
                | Error::Truncated(_)
                | Error::DimensionMismatch(_)
                | Error::NonMonotoneFrequencies(_)
                | Error::InvalidData(_)
                | Error::NoHorizontalDirections { .. }
                | Error::GridMismatch(_)
                | Error::ChannelMismatch { .. }
                | Error::Io(_)
                | Error::Json(_)
                | Error::Wav(_)
        )
    }
}
