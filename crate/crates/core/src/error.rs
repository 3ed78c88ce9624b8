use thiserror::Error;

use crate::numerics::NumericsError;
use crate::eval::EvalError;
use crate::text::TextError;
use crate::translator::CheckpointError;

/// Errors raised by the models and their training loops.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("token id {id} out of range for vocabulary of size {size}")]
    VocabRange { id: u32, size: usize },
    #[error("sequence length {len} exceeds the {max} available positions")]
    Length { len: usize, max: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("malformed target row {row}: {reason}")]
    MalformedTarget { row: usize, reason: &'static str },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("non-finite loss at epoch {epoch}")]
    NonFinite { epoch: usize },
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;
