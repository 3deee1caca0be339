//! GPT-2 shaped decoder-only language model: forward and backward passes,
//! Adam, checkpoints and the fine-tuning loop.

mod checkpoint;
mod config;
mod decode;
mod model;
mod optim;
mod params;
pub mod real;
mod train;

pub use checkpoint::{
    check_shape, load_checkpoint, load_checkpoint_expecting, read_checkpoint, save_checkpoint, write_checkpoint,
    Checkpoint, MAGIC,
};
pub use config::{ModelConfig, TrainConfig, FINETUNE_LEARNING_RATE, FRESH_LEARNING_RATE};
pub use decode::DecodeState;
pub use model::{cross_entropy, softmax, ForwardPass, Logits, IGNORE};
pub use optim::{clip_grad_norm, AdamParams, AdamState};
pub use params::{Layout, Parameters, TensorSpec};
pub use train::{finetune, finetune_with, format_loss_log, Init, TrainOutcome};

use crate::tokenizer::TokenId;

#[derive(Debug, thiserror::Error)]
pub enum LmError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("token id {id} is outside the vocabulary of {vocab_size}")]
    TokenOutOfRange { id: TokenId, vocab_size: usize },
    #[error("sequence of {len} tokens exceeds the context length {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("empty token sequence")]
    EmptySequence,
    #[error("every target position is ignored")]
    NothingToPredict,
    #[error("loss became non-finite at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("vocabulary fingerprint {found:016x} does not match checkpoint fingerprint {expected:016x}")]
    FingerprintMismatch { expected: u64, found: u64 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("corpus holds no documents")]
    EmptyCorpus,
    #[error("corpus: {0}")]
    Corpus(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[cfg(test)]
mod tests;
