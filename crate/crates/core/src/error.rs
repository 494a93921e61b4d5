use thiserror::Error;

/// Errors produced by the library and surfaced by the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at record {record}: {reason}")]
    Parse { record: usize, reason: String },

    #[error("record {record}: coordinate ({x}, {y}) outside {width}x{height} sensor")]
    Bounds {
        record: usize,
        x: i64,
        y: i64,
        width: u16,
        height: u16,
    },

    #[error("record {record}: polarity {value} is not -1 or +1")]
    Polarity { record: usize, value: i64 },

    #[error("record {record}: timestamp {t} outside window [{t0}, {tn}]")]
    Window { record: usize, t: u64, t0: u64, tn: u64 },

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("weight error: {0}")]
    Weights(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("event stream must be sorted by timestamp")]
    Unsorted,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn param(msg: impl Into<String>) -> Error {
    Error::Param(msg.into())
}

pub(crate) fn shape(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
