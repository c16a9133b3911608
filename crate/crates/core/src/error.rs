use thiserror::Error;

use crate::clicklog::{LayoutShape, Position};
use crate::taxonomy::CycleError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A log line could not be read or violated a record invariant.
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("{0}")]
    InvalidSession(String),

    #[error("position {pos} outside shape {shape}")]
    PositionOutOfRange { pos: Position, shape: LayoutShape },

    #[error("invalid descriptor: {0}")]
    InvalidDescriptor(String),

    #[error(transparent)]
    Cycle(#[from] CycleError),

    #[error("unknown model kind `{0}`")]
    UnknownModel(String),

    /// Parameter tables that are incomplete or out of range.
    #[error("{0}")]
    InvalidModel(String),

    /// Model and session/log do not fit together.
    #[error("{0}")]
    Mismatch(String),

    #[error("invalid prior: {0}")]
    InvalidPrior(String),

    #[error("{0}")]
    Config(String),

    #[error("{0}")]
    Estimation(String),

    #[error("internal fault: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
