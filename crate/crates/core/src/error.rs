use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: usize, msg: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("bitstream underrun")]
    Underrun,

    #[error("bad bitstream: {0}")]
    BadBitstream(String),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}
