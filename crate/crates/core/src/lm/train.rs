//! Fine-tuning loop over a packed token stream.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::config::{ModelConfig, TrainConfig};
use super::optim::{clip_grad_norm, AdamParams, AdamState};
use super::params::Parameters;
use super::LmError;
use crate::corpus::{scan_corpus, ANSWER_MARKER};
use crate::tokenizer::{TokenId, Vocab};

/// Where training starts from.
pub enum Init {
    /// Seeded random initialization of the given shape.
    Fresh(ModelConfig),
    /// Continue from an existing checkpoint.
    Resume(Checkpoint),
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// Training loss before each optimizer step, in step order.
    pub losses: Vec<f32>,
}

/// Loss log lines: `step<TAB>loss`, steps counted from 1.
pub fn format_loss_log(losses: &[f32]) -> String {
    losses
        .iter()
        .enumerate()
        .map(|(i, l)| format!("{}\t{}\n", i + 1, l))
        .collect()
}

/// For each stream position, whether it may serve as a prediction target
/// under answer-only supervision: tokens after an answer marker up to and
/// including the end-of-text token.
fn answer_positions(stream: &[TokenId], vocab: &Vocab) -> Vec<bool> {
    let answer = Vocab::special_id(ANSWER_MARKER).unwrap();
    let eot = vocab.end_of_text_id();
    let mut inside = false;
    stream
        .iter()
        .map(|&t| {
            let here = inside;
            if t == answer {
                inside = true;
            } else if t == eot {
                inside = false;
            }
            here
        })
        .collect()
}

pub fn finetune(init: Init, corpus: &str, vocab: &Vocab, config: &TrainConfig) -> Result<TrainOutcome, LmError> {
    finetune_with(init, corpus, vocab, config, |_, _| {})
}

/// Like [`finetune`], calling `on_step(step, loss)` after every update.
pub fn finetune_with(
    init: Init,
    corpus: &str,
    vocab: &Vocab,
    config: &TrainConfig,
    mut on_step: impl FnMut(usize, f32),
) -> Result<TrainOutcome, LmError> {
    config.validate()?;
    let fingerprint = vocab.fingerprint();
    let (mut params, mut adam, start_step) = match init {
        Init::Fresh(model) => {
            model.validate()?;
            (Parameters::<f32>::init(model, config.seed), None, 0)
        }
        Init::Resume(ck) => {
            if ck.vocab_fingerprint != fingerprint {
                return Err(LmError::FingerprintMismatch { expected: ck.vocab_fingerprint, found: fingerprint });
            }
            (ck.params, ck.optimizer, ck.step)
        }
    };
    if vocab.len() > params.config.vocab_size {
        return Err(LmError::ShapeMismatch(format!(
            "tokenizer has {} ids but the model only {}",
            vocab.len(),
            params.config.vocab_size
        )));
    }

    let docs = scan_corpus(corpus).map_err(|e| LmError::Corpus(e.to_string()))?;
    if docs == 0 {
        return Err(LmError::EmptyCorpus);
    }
    let stream = vocab.encode(corpus);
    if stream.len() < 2 {
        return Err(LmError::EmptyCorpus);
    }
    let supervised = config.answer_only.then(|| answer_positions(&stream, vocab));

    let seq = params.config.context_length.min(stream.len() - 1);
    let batch = config.batch_size;
    let mut adam = adam.take().unwrap_or_else(|| AdamState::new(params.len()));
    let hp = AdamParams { lr: config.learning_rate, beta1: config.beta1, beta2: config.beta2, eps: config.eps };
    let mut sampler = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(2));

    let mut inputs = vec![0; batch * seq];
    let mut targets = vec![0; batch * seq];
    let mut losses = Vec::with_capacity(config.steps);
    for step in 1..=config.steps {
        for b in 0..batch {
            let start = sampler.gen_range(0..=stream.len() - seq - 1);
            inputs[b * seq..(b + 1) * seq].copy_from_slice(&stream[start..start + seq]);
            for i in 0..seq {
                let pos = start + i + 1;
                let keep = supervised.as_ref().is_none_or(|s| s[pos]);
                targets[b * seq + i] = if keep { stream[pos] } else { super::model::IGNORE };
            }
        }
        let (loss, mut grads) = match params.loss_and_grad(&inputs, &targets, batch, seq, Some(&mut dropout_rng)) {
            Ok(r) => r,
            // An answer-only batch can miss every answer; skip its update.
            Err(LmError::NothingToPredict) if supervised.is_some() => {
                losses.push(0.0);
                on_step(step, 0.0);
                continue;
            }
            Err(e) => return Err(e),
        };
        let loss = loss as f32;
        if !loss.is_finite() {
            return Err(LmError::NonFiniteLoss { step });
        }
        clip_grad_norm(&mut grads, config.grad_clip);
        adam.step(&mut params.data, &grads, hp);
        losses.push(loss);
        on_step(step, loss);
    }

    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            params,
            optimizer: Some(adam),
            step: start_step + config.steps as u64,
            vocab_fingerprint: fingerprint,
        },
        losses,
    })
}
