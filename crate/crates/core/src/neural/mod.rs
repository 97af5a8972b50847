//! Attention-based copying encoder-decoder with hand-written gradients.

mod checkpoint;
mod grad;
pub mod linalg;
mod lstm;
mod model;
mod params;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use grad::{accumulate_gradient, log_likelihood, sequence_log_likelihood};
pub use lstm::{lstm_backward, lstm_forward, lstm_step, lstm_step_backward, StepCache};
pub use model::{
    action_distribution, advance, attend, encode, initial_state, step_logits, token_log_prob, Attention, DecoderState,
    EncoderStates, ModelConfig, PreparedInput, Seq2Seq, StepLogits, Target,
};
pub use params::{Dims, LstmCell, ModelParams, INIT_SCALE};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty input sequence")]
    EmptyInput,
    #[error("every action is masked")]
    AllMasked,
    #[error("target token {0:?} can be neither written nor copied")]
    UnreachableTarget(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
