use std::io;

/// Errors raised anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A layer, op or config whose shapes or parameters do not fit together.
    #[error("configuration error in {layer}: {msg}")]
    Config { layer: String, msg: String },

    /// Caller-supplied data violates an operation's precondition.
    #[error("input error: {0}")]
    Input(String),

    /// A value failed a range or consistency check after being read.
    #[error("validation error: {0}")]
    Validation(String),

    /// Malformed or truncated binary/text file.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    /// NaN or infinity where finite numbers are required.
    #[error("non-finite value in {layer}: {msg}")]
    NonFinite { layer: String, msg: String },

    /// A loss or metric was asked to reduce over zero valid pixels.
    #[error("empty valid mask")]
    EmptyMask,

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(layer: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            layer: layer.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            msg: msg.into(),
        }
    }
}
