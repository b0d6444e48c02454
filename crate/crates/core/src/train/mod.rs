//! Next-token training: masked cross-entropy, Adam with global-norm
//! clipping, the epoch loop, and finite-difference gradient verification.

mod adam;
mod corpus;
mod gradcheck;
mod loss;
mod trainer;

use thiserror::Error;

use crate::codec::CodecError;
use crate::transformer::ModelError;

pub use adam::{adam_step, Adam, AdamConfig};
pub use corpus::{Corpus, Example, RowCorpus};
pub use gradcheck::{grad_check, grad_check_with, GradCheckConfig, GradCheckReport};
pub use loss::{cross_entropy, loss_and_grad, loss_and_grad_with_fault, BatchLoss};
pub use trainer::{train, train_corpus, TrainConfig, TrainTrace};

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("sequence of {len} tokens exceeds context length {context}")]
    SequenceOverflow { len: usize, context: usize },
    #[error("logits have {rows}x{cols} entries but {targets} targets were given")]
    ShapeMismatch { rows: usize, cols: usize, targets: usize },
    #[error("every target position is padding")]
    NoTargets,
    #[error("non-finite gradient (norm {0}); step aborted")]
    NonFiniteGradient(f64),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}
