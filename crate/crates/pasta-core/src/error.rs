use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value produced in {0}")]
    NonFinite(String),

    #[error("backward already ran on this tape")]
    TapeConsumed,

    #[error("backward on an empty tape")]
    EmptyTape,

    #[error("backward requires a scalar loss, got {0} elements")]
    NonScalarLoss(usize),

    #[error("out of memory: requested {requested} bytes with {live} live under cap {cap}")]
    OutOfMemory {
        requested: usize,
        live: usize,
        cap: usize,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("checkpoint mismatch on field `{field}`: checkpoint has {stored}, requested {requested}")]
    CheckpointMismatch {
        field: String,
        stored: String,
        requested: String,
    },

    #[error("{0}")]
    Msg(String),
}

impl Error {
    pub fn msg(s: impl Into<String>) -> Self {
        Error::Msg(s.into())
    }

    pub fn shape(s: impl Into<String>) -> Self {
        Error::ShapeMismatch(s.into())
    }

    pub fn arg(s: impl Into<String>) -> Self {
        Error::InvalidArgument(s.into())
    }
}
