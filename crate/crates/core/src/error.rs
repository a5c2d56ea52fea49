//! Crate-wide error type.
//!
//! Numeric preconditions return `Err` instead of letting NaN propagate, so
//! every fallible operation in the crate shares this enum. I/O variants carry
//! the offending path; format variants additionally say which field or offset
//! was bad, so a CLI can print something actionable.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor or model shapes do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A numeric precondition was violated (empty input, out-of-range
    /// parameter, non-finite value where a finite one is required).
    #[error("invalid argument: {0}")]
    Domain(String),

    /// A spectrum with no power, for which frequency statistics are
    /// undefined.
    #[error("degenerate spectrum: {0}")]
    Degenerate(String),

    /// Underlying I/O failure, tagged with the path involved.
    #[error("i/o on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file parsed but its contents violate the expected format.
    #[error("format error in {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    /// A configuration file or key could not be interpreted.
    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
