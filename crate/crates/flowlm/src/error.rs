//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shapes do not conform: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: String,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("node {0} is not on this tape")]
    NodeNotOnTape(usize),

    #[error("unknown token id {id} for vocabulary of size {vocab}")]
    UnknownToken { id: usize, vocab: usize },

    #[error("time {t} too close to 1 for the x→v conversion")]
    NearSingularTime { t: f64 },

    #[error("guidance scale must be positive, got {0}")]
    NonPositiveGuidance(f64),

    #[error("sde step: gamma*dt = {0} leaves no remaining signal (alpha <= 0)")]
    SdeJumpTooLarge(f64),

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("training diverged: non-finite loss at step {step} ({branch} branch): {detail}")]
    NanLoss {
        step: u64,
        branch: String,
        detail: String,
    },

    #[error("eval: {0}")]
    Eval(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
