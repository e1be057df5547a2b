use std::fmt;

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Which side of a foreground/background split came out empty.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskSide {
    Foreground,
    Background,
}

impl fmt::Display for MaskSide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MaskSide::Foreground => f.write_str("foreground"),
            MaskSide::Background => f.write_str("background"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: expected rank {expected}, got rank {got}")]
    Rank {
        op: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{op}: shape mismatch, expected {expected:?}, got {got:?}")]
    Shape {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("{op}: non-finite value encountered")]
    NonFinite { op: &'static str },

    #[error("{what} index {index} out of range (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A key mask excludes every key of a row.
    #[error("attention key mask excludes every key")]
    EmptyKeyMask,

    /// Mask-guided fusion received a source mask with no keys on one side.
    #[error("degenerate source mask: {side} key set is empty")]
    DegenerateMask { side: MaskSide },

    /// Wraps a control failure with the sampler position it occurred at.
    #[error("control failure at step {step}, layer {layer}, branch {branch}: {source}")]
    ControlAt {
        step: usize,
        layer: usize,
        branch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("semantic map requested with an empty token set")]
    EmptyTokenSet,

    #[error("attention record incomplete: {have} of {want} layers recorded")]
    IncompleteRecord { have: usize, want: usize },

    #[error("non-positive mean similarity; CSCV undefined")]
    UndefinedCscv,

    #[error("malformed {format} data: {message}")]
    Format {
        format: &'static str,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(format: &'static str, message: impl Into<String>) -> Self {
        Error::Format {
            format,
            message: message.into(),
        }
    }
}
