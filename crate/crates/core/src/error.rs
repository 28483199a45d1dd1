use std::io;

use thiserror::Error;

/// Errors produced anywhere in the codec, search and evaluation stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("malformed container: {0}")]
    Container(String),

    #[error("bitstream parse error: {0}")]
    Parse(String),

    #[error("entropy decode failed at byte {position}: {reason}")]
    Corrupt { position: usize, reason: String },

    #[error("tile {tile}: {source}")]
    Tile {
        tile: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("comparison graph is disconnected: components {0:?}")]
    Disconnected(Vec<Vec<String>>),

    #[error("image: {0}")]
    Image(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

pub(crate) fn shape(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}

pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        reason: reason.into(),
    }
}
