use std::io;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shapes, ranges, modes).
    #[error("contract violation: {0}")]
    Contract(String),

    /// `backward` was called on a graph whose adjoints were already consumed.
    #[error("stale graph: backward already ran on this forward pass")]
    StaleGraph,

    #[error("point cloud has no points")]
    EmptyCloud,

    #[error("not enough location sets: {0}")]
    InsufficientSets(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Shorthand for returning a contract violation.
#[allow(dead_code)]
pub(crate) fn contract<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Contract(msg.into()))
}

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::Contract(format!($($arg)+)));
        }
    };
}
pub(crate) use ensure;
