//! Answer generation: prompt prefix, temperature sampling and stop handling.

mod dump;

use std::fmt;
use std::str::FromStr;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{escape_payload, unescape_payload, ANSWER_MARKER, END_OF_TEXT, QUESTION_MARKER, START_OF_TEXT};
use crate::lm::{Checkpoint, LmError};
use crate::tokenizer::{TokenId, TokenizerError, Vocab};

pub use dump::{parse_answer_dump, write_answer_dump, AnswerDump, QuestionAnswers};

#[derive(Debug, thiserror::Error)]
pub enum GenerateError {
    #[error("question is empty")]
    EmptyQuestion,
    #[error("invalid sampling configuration: {0}")]
    InvalidConfig(String),
    #[error("logits contain a non-finite value")]
    NonFiniteLogits,
    #[error("prompt is {len} tokens but the context holds {max}")]
    PromptTooLong { len: usize, max: usize },
    #[error("answer dump line {line}: {message}")]
    Dump { line: usize, message: String },
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleConfig {
    pub max_new_tokens: usize,
    pub temperature: f32,
    pub n_samples: usize,
    /// Samples decoded concurrently.
    pub batch_size: usize,
    pub top_k: Option<usize>,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self { max_new_tokens: 250, temperature: 0.7, n_samples: 5, batch_size: 5, top_k: None, seed: 42 }
    }
}

impl SampleConfig {
    pub fn validate(&self) -> Result<(), GenerateError> {
        let bad = |m: &str| Err(GenerateError::InvalidConfig(m.to_string()));
        if self.max_new_tokens == 0 {
            return bad("max_new_tokens must be at least 1");
        }
        if !(self.temperature >= 0.0) || !self.temperature.is_finite() {
            return bad("temperature must be a finite non-negative number");
        }
        if self.n_samples == 0 {
            return bad("n_samples must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.top_k == Some(0) {
            return bad("top_k must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StopReason {
    EndOfText,
    LengthCap,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::EndOfText => "EndOfText",
            StopReason::LengthCap => "LengthCap",
        })
    }
}

impl FromStr for StopReason {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "EndOfText" => Ok(StopReason::EndOfText),
            "LengthCap" => Ok(StopReason::LengthCap),
            other => Err(format!("unknown stop reason {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedAnswer {
    pub question_text: String,
    pub prompt_text: String,
    pub sample_index: usize,
    pub answer_text: String,
    pub stop_reason: StopReason,
    /// Sampled tokens kept in the answer; the stop token is not counted.
    pub new_tokens: usize,
}

/// The training-document prefix up to and including the answer marker.
pub fn build_prompt(question: &str) -> Result<String, GenerateError> {
    let question = question.trim();
    if question.is_empty() {
        return Err(GenerateError::EmptyQuestion);
    }
    Ok(format!("{START_OF_TEXT}\n{QUESTION_MARKER}: {}\n{ANSWER_MARKER}:", escape_payload(question)))
}

/// Probabilities `sample_next` draws from when `temperature > 0`.
pub fn sampling_distribution(logits: &[f32], temperature: f32, top_k: Option<usize>) -> Result<Vec<f64>, GenerateError> {
    if !(temperature > 0.0) {
        return Err(GenerateError::InvalidConfig("sampling distribution needs temperature > 0".into()));
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(GenerateError::NonFiniteLogits);
    }
    let t = temperature as f64;
    let mut keep = vec![true; logits.len()];
    if let Some(k) = top_k.filter(|&k| k < logits.len()) {
        let mut order: Vec<usize> = (0..logits.len()).collect();
        order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
        keep.iter_mut().for_each(|x| *x = false);
        for &i in &order[..k] {
            keep[i] = true;
        }
    }
    let max = logits
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(&x, _)| x as f64)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits
        .iter()
        .zip(&keep)
        .map(|(&x, &k)| if k { ((x as f64 - max) / t).exp() } else { 0.0 })
        .collect();
    let sum: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= sum);
    Ok(p)
}

/// Draws the next token; temperature 0 is argmax with ties to the lowest id.
pub fn sample_next<R: Rng + ?Sized>(
    logits: &[f32],
    temperature: f32,
    top_k: Option<usize>,
    rng: &mut R,
) -> Result<TokenId, GenerateError> {
    if temperature < 0.0 || temperature.is_nan() {
        return Err(GenerateError::InvalidConfig(format!("temperature {temperature} is negative")));
    }
    if logits.is_empty() {
        return Err(GenerateError::InvalidConfig("empty logits row".into()));
    }
    if temperature == 0.0 {
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(GenerateError::NonFiniteLogits);
        }
        let mut best = 0;
        for (i, &x) in logits.iter().enumerate() {
            if x > logits[best] {
                best = i;
            }
        }
        return Ok(best as TokenId);
    }
    let p = sampling_distribution(logits, temperature, top_k)?;
    let dist = WeightedIndex::new(&p).map_err(|e| GenerateError::InvalidConfig(e.to_string()))?;
    Ok(dist.sample(rng) as TokenId)
}

/// Byte offset of the first unescaped end-of-text marker.
fn find_end_marker(bytes: &[u8]) -> Option<usize> {
    let marker = END_OF_TEXT.as_bytes();
    bytes
        .windows(marker.len())
        .enumerate()
        .find(|&(i, w)| w == marker && (i == 0 || bytes[i - 1] != b'\\'))
        .map(|(i, _)| i)
}

/// Splits the encoded prompt after its last delimiter.
///
/// Training documents merge the text after `[ANSWER]` with the start of the
/// answer, so the prompt's own encoding of that tail never occurs in training.
/// The tail is dropped here and regenerated under a byte constraint.
fn heal_prompt(vocab: &Vocab, prompt_ids: &[TokenId]) -> Result<(Vec<TokenId>, Vec<u8>), GenerateError> {
    let cut = prompt_ids.iter().rposition(|&id| vocab.is_special(id)).map_or(0, |i| i + 1);
    Ok((prompt_ids[..cut].to_vec(), vocab.decode_bytes(&prompt_ids[cut..])?))
}

/// Masks every token that cannot continue the pending prompt bytes.
fn constrain(logits: &mut [f32], vocab: &Vocab, pending: &[u8]) {
    for (id, x) in logits.iter_mut().enumerate() {
        let id = id as TokenId;
        let ok = !vocab.is_special(id)
            && vocab.token_bytes(id).is_some_and(|b| !b.is_empty() && (b.starts_with(pending) || pending.starts_with(b)));
        if !ok {
            *x = f32::MIN;
        }
    }
}

fn generate_one(
    ck: &Checkpoint,
    vocab: &Vocab,
    prompt_ids: &[TokenId],
    config: &SampleConfig,
    sample_index: usize,
) -> Result<(String, StopReason, usize), GenerateError> {
    let params = &ck.params;
    let ctx = params.config.context_length;
    let eot = vocab.end_of_text_id();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(sample_index as u64));
    let (context, mut pending) = heal_prompt(vocab, prompt_ids)?;
    let (mut state, mut logits) = params.prefill(&context)?;
    let mut history = context;
    let mut answer_bytes = Vec::new();
    let mut new_tokens = 0;
    let reason = loop {
        if new_tokens == config.max_new_tokens {
            break StopReason::LengthCap;
        }
        // Ids past the tokenizer (a model with a larger table) are never drawn.
        logits.truncate(vocab.len());
        if !pending.is_empty() {
            constrain(&mut logits, vocab, &pending);
        }
        let next = sample_next(&logits, config.temperature, config.top_k, &mut rng)?;
        if next == eot {
            break StopReason::EndOfText;
        }
        let bytes = vocab.decode_bytes(&[next])?;
        if pending.is_empty() {
            answer_bytes.extend_from_slice(&bytes);
        } else if bytes.len() >= pending.len() {
            answer_bytes.extend_from_slice(&bytes[pending.len()..]);
            pending.clear();
        } else {
            pending.drain(..bytes.len());
        }
        // A marker spelled out byte by byte also ends the answer.
        if let Some(at) = find_end_marker(&answer_bytes) {
            answer_bytes.truncate(at);
            break StopReason::EndOfText;
        }
        new_tokens += 1;
        history.push(next);
        logits = if state.len() == ctx {
            let (s, l) = params.prefill(&history[history.len() - (ctx - 1)..])?;
            state = s;
            l
        } else {
            params.decode_step(&mut state, next)?
        };
    };
    let text = String::from_utf8_lossy(&answer_bytes);
    Ok((unescape_payload(text.trim()), reason, new_tokens))
}

/// Samples `config.n_samples` answers to `question`.
///
/// Sample `i` uses its own generator seeded with `seed + i`, so batching
/// never changes the output.
pub fn generate(
    ck: &Checkpoint,
    vocab: &Vocab,
    question: &str,
    config: &SampleConfig,
) -> Result<Vec<GeneratedAnswer>, GenerateError> {
    config.validate()?;
    let found = vocab.fingerprint();
    if ck.vocab_fingerprint != found {
        return Err(LmError::FingerprintMismatch { expected: ck.vocab_fingerprint, found }.into());
    }
    if vocab.len() > ck.params.config.vocab_size {
        return Err(LmError::ShapeMismatch(format!(
            "vocabulary has {} tokens but the model only {}",
            vocab.len(),
            ck.params.config.vocab_size
        ))
        .into());
    }
    let prompt = build_prompt(question)?;
    let prompt_ids = vocab.encode(&prompt);
    let ctx = ck.params.config.context_length;
    if prompt_ids.len() >= ctx {
        return Err(GenerateError::PromptTooLong { len: prompt_ids.len(), max: ctx });
    }

    let prompt_ids = &prompt_ids;
    let indices: Vec<usize> = (0..config.n_samples).collect();
    let mut answers = Vec::with_capacity(config.n_samples);
    for batch in indices.chunks(config.batch_size) {
        let results: Vec<_> = std::thread::scope(|s| {
            let handles: Vec<_> = batch
                .iter()
                .map(|&i| s.spawn(move || generate_one(ck, vocab, prompt_ids, config, i)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("sampler thread panicked")).collect()
        });
        for (&i, result) in batch.iter().zip(results) {
            let (answer_text, stop_reason, new_tokens) = result?;
            answers.push(GeneratedAnswer {
                question_text: question.trim().to_string(),
                prompt_text: prompt.clone(),
                sample_index: i,
                answer_text,
                stop_reason,
                new_tokens,
            });
        }
    }
    Ok(answers)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prompt_matches_document_prefix() {
        assert_eq!(
            build_prompt("How to open a DataBase connection?").unwrap(),
            "<|startoftext|>\n[QUESTION]: How to open a DataBase connection?\n[ANSWER]:"
        );
        assert!(matches!(build_prompt("  "), Err(GenerateError::EmptyQuestion)));
        let p = build_prompt("what does [ANSWER] mean").unwrap();
        assert!(p.contains("\\[ANSWER] mean"));
        assert_eq!(crate::corpus::find_delimiters(&p).len(), 3);
    }

    #[test]
    fn zero_temperature_is_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_next(&[0.0, 10.0, 0.0], 0.0, None, &mut rng).unwrap(), 1);
        assert_eq!(sample_next(&[3.0, 1.0, 3.0], 0.0, None, &mut rng).unwrap(), 0);
        assert!(sample_next(&[1.0], -0.1, None, &mut rng).is_err());
    }

    #[test]
    fn top_k_truncates() {
        let p = sampling_distribution(&[1.0, 4.0, 3.0, 2.0], 1.0, Some(2)).unwrap();
        assert_eq!((p[0], p[3]), (0.0, 0.0));
        let e = (1f64).exp();
        assert!((p[1] - e / (e + 1.0)).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let id = sample_next(&[1.0, 4.0, 3.0, 2.0], 5.0, Some(2), &mut rng).unwrap();
            assert!(id == 1 || id == 2);
        }
    }

    #[test]
    fn healing_drops_the_tail_after_the_answer_marker() {
        let vocab = crate::tokenizer::train_bpe("[ANSWER]: Use it\n[ANSWER]: Use it\n", 300).unwrap();
        let ids = vocab.encode(&build_prompt("q").unwrap());
        let (context, tail) = heal_prompt(&vocab, &ids).unwrap();
        assert_eq!(*context.last().unwrap(), Vocab::special_id(ANSWER_MARKER).unwrap());
        assert_eq!(tail, b":");
        let mut logits = vec![0.0f32; vocab.len()];
        constrain(&mut logits, &vocab, b":");
        let allowed: Vec<Vec<u8>> = (0..vocab.len() as TokenId)
            .filter(|&i| logits[i as usize] == 0.0)
            .map(|i| vocab.token_bytes(i).unwrap().to_vec())
            .collect();
        assert!(allowed.contains(&b":".to_vec()));
        assert!(allowed.iter().all(|b| b.starts_with(b":")));
        assert!(allowed.len() > 1);
    }

    #[test]
    fn spelled_out_marker_is_found_unless_escaped() {
        assert_eq!(find_end_marker(b"ab<|endoftext|>"), Some(2));
        assert_eq!(find_end_marker(b"ab\\<|endoftext|>"), None);
    }

    #[test]
    fn defaults_follow_protocol() {
        let c = SampleConfig::default();
        assert_eq!((c.max_new_tokens, c.temperature, c.n_samples, c.batch_size), (250, 0.7, 5, 5));
        c.validate().unwrap();
        assert!(SampleConfig { n_samples: 0, ..c.clone() }.validate().is_err());
        assert!(SampleConfig { temperature: -1.0, ..c }.validate().is_err());
    }

    fn random_model(ctx: usize) -> (Checkpoint, Vocab) {
        let vocab = crate::tokenizer::train_bpe("How to create a window? Use JFrame. ".repeat(20).as_str(), 300).unwrap();
        let config = crate::lm::ModelConfig {
            vocab_size: vocab.len(),
            context_length: ctx,
            n_layers: 1,
            n_heads: 2,
            d_model: 16,
            mlp_ratio: 2,
            dropout: 0.0,
        };
        let params = crate::lm::Parameters::init(config, 3);
        (Checkpoint { params, optimizer: None, step: 0, vocab_fingerprint: vocab.fingerprint() }, vocab)
    }

    #[test]
    fn greedy_samples_agree_and_stop_reasons_are_consistent() {
        let (ck, vocab) = random_model(64);
        let config = SampleConfig { temperature: 0.0, max_new_tokens: 20, ..SampleConfig::default() };
        let out = generate(&ck, &vocab, "How to create a window?", &config).unwrap();
        assert_eq!(out.len(), 5);
        assert!(out.iter().all(|a| a.answer_text == out[0].answer_text));
        for a in &out {
            assert_eq!(a.stop_reason == StopReason::LengthCap, a.new_tokens == 20);
            assert!(!a.answer_text.contains(END_OF_TEXT));
            assert!(!a.answer_text.starts_with(&a.prompt_text));
        }
    }

    #[test]
    fn window_slides_past_the_context() {
        let (ck, vocab) = random_model(24);
        let config = SampleConfig { temperature: 1.5, max_new_tokens: 60, n_samples: 3, batch_size: 2, ..SampleConfig::default() };
        let a = generate(&ck, &vocab, "How to create a window?", &config).unwrap();
        let b = generate(&ck, &vocab, "How to create a window?", &SampleConfig { batch_size: 1, ..config.clone() }).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().any(|x| x.new_tokens > 24));
    }

    #[test]
    fn overlong_prompt_and_foreign_vocab_fail() {
        let (ck, vocab) = random_model(8);
        let long = generate(&ck, &vocab, "How to create a window with a very long question?", &SampleConfig::default());
        assert!(matches!(long, Err(GenerateError::PromptTooLong { .. })));
        let other = Vocab::base();
        let mismatch = generate(&ck, &other, "x", &SampleConfig::default());
        assert!(matches!(mismatch, Err(GenerateError::Lm(LmError::FingerprintMismatch { .. }))));
    }
}
