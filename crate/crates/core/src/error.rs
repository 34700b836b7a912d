//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument was violated.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// A persisted artifact is malformed. `section` names the field that
    /// failed to parse, `offset` is the byte position where parsing stopped.
    #[error("format error in {section} at byte {offset}: {detail}")]
    Format {
        section: &'static str,
        offset: u64,
        detail: String,
    },

    /// A chaos map left its admissible range (invalid parameters).
    #[error("range error: {0}")]
    Range(String),

    /// Mutual-authentication failure during deployment.
    #[error("authentication failed: {0}")]
    Auth(String),

    /// Protocol-level failure (bad frame order, unknown device, exhausted
    /// challenge store, ...).
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Device registration failure.
    #[error("enrollment error: {0}")]
    Enrollment(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn parameter(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub fn format(section: &'static str, offset: u64, detail: impl Into<String>) -> Self {
        Error::Format {
            section,
            offset,
            detail: detail.into(),
        }
    }
}
