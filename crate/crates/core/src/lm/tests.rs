use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::tokenizer::Vocab;

fn micro() -> ModelConfig {
    ModelConfig { vocab_size: 20, context_length: 8, n_layers: 2, n_heads: 2, d_model: 8, mlp_ratio: 4, dropout: 0.0 }
}

fn noisy_params(config: ModelConfig, seed: u64) -> Parameters<f64> {
    let mut p = Parameters::<f64>::init(config, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    for x in p.data.iter_mut() {
        *x += rng.gen_range(-0.3..0.3);
    }
    p
}

#[test]
fn logits_shape_and_finiteness() {
    let mut c = ModelConfig::tiny();
    c.vocab_size = 300;
    let p = Parameters::<f32>::init(c, 1);
    let logits = p.forward(&[5]).unwrap();
    assert_eq!((logits.rows, logits.cols), (1, 300));
    assert!(logits.data.iter().all(|x| x.is_finite()));
}

#[test]
fn forward_input_errors() {
    let p = Parameters::<f32>::init(micro(), 1);
    assert!(matches!(p.forward(&[]), Err(LmError::EmptySequence)));
    assert!(matches!(p.forward(&[20]), Err(LmError::TokenOutOfRange { id: 20, .. })));
    assert!(matches!(p.forward(&[1; 9]), Err(LmError::SequenceTooLong { len: 9, max: 8 })));
}

#[test]
fn prefix_rows_ignore_the_suffix() {
    let p = Parameters::<f32>::init(micro(), 3);
    let a = p.forward(&[1, 2, 3, 4, 5, 6]).unwrap();
    let b = p.forward(&[1, 2, 3, 19, 0, 7]).unwrap();
    for i in 0..3 {
        assert_eq!(a.row(i), b.row(i));
    }
    assert_ne!(a.row(3), b.row(3));
}

#[test]
fn softmax_rows_sum_to_one() {
    let p = Parameters::<f32>::init(micro(), 3);
    let logits = p.forward(&[1, 2, 3]).unwrap();
    for i in 0..3 {
        let s: f32 = softmax(logits.row(i)).iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
    }
}

#[test]
fn uniform_logits_give_log_vocab_loss() {
    let logits = Logits { rows: 2, cols: 50, data: vec![0.25f64; 100] };
    let loss = cross_entropy(&logits, &[3, 7]).unwrap();
    assert!((loss - (50f64).ln()).abs() < 1e-12);
}

#[test]
fn confident_logits_approach_zero_loss() {
    let mut prev = f64::INFINITY;
    for margin in [1.0, 5.0, 20.0, 60.0] {
        let mut data = vec![0.0f64; 10];
        data[4] = margin;
        let loss = cross_entropy(&Logits { rows: 1, cols: 10, data }, &[4]).unwrap();
        assert!(loss < prev);
        prev = loss;
    }
    assert!(prev < 1e-20);
}

#[test]
fn all_ignored_targets_is_an_error() {
    let logits = Logits { rows: 2, cols: 3, data: vec![0.0f64; 6] };
    assert!(matches!(cross_entropy(&logits, &[IGNORE, IGNORE]), Err(LmError::NothingToPredict)));
}

#[test]
fn gradient_matches_central_differences() {
    let p = noisy_params(micro(), 11);
    let tokens = [3u32, 7, 1, 19, 4, 4, 9, 2, 0, 5, 6, 11];
    let targets = [7u32, 1, 19, 4, 4, 9, IGNORE, 0, 5, 6, 11, 13];
    let (_, grads) = p.loss_and_grad(&tokens, &targets, 2, 6, None::<&mut ChaCha8Rng>).unwrap();
    let loss_at = |params: &Parameters<f64>| {
        let logits = params.forward_pass::<ChaCha8Rng>(&tokens, 2, 6, None).unwrap().logits;
        cross_entropy(&logits, &targets).unwrap()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let eps = 1e-4;
    for _ in 0..40 {
        let i = rng.gen_range(0..p.len());
        let mut plus = p.clone();
        plus.data[i] += eps;
        let mut minus = p.clone();
        minus.data[i] -= eps;
        let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * eps);
        let denom = grads[i].abs().max(numeric.abs()).max(1e-8);
        assert!((grads[i] - numeric).abs() / denom < 1e-3, "coord {i}: {} vs {numeric}", grads[i]);
    }
}

#[test]
fn dropout_only_applies_with_rng() {
    let mut c = micro();
    c.dropout = 0.5;
    let p = Parameters::<f32>::init(c, 2);
    let plain = p.forward(&[1, 2, 3]).unwrap();
    let again = p.forward(&[1, 2, 3]).unwrap();
    assert_eq!(plain, again);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let dropped = p.forward_pass(&[1, 2, 3], 1, 3, Some(&mut rng)).unwrap().logits;
    assert_ne!(plain, dropped);
}

#[test]
fn decode_steps_track_full_forward() {
    let p = Parameters::<f32>::init(micro(), 9);
    let tokens = [4u32, 8, 15, 16, 2, 3];
    let full = p.forward(&tokens).unwrap();
    let (mut state, first) = p.prefill(&tokens[..2]).unwrap();
    let close = |a: &[f32], b: &[f32]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-5);
    assert!(close(&first, full.row(1)));
    for (i, &t) in tokens.iter().enumerate().skip(2) {
        let row = p.decode_step(&mut state, t).unwrap();
        assert!(close(&row, full.row(i)), "position {i}");
    }
    assert_eq!(state.len(), tokens.len());
    for t in [0, 1] {
        p.decode_step(&mut state, t).unwrap();
    }
    assert!(matches!(p.decode_step(&mut state, 1), Err(LmError::SequenceTooLong { .. })));
}

fn checkpoint(seed: u64) -> Checkpoint {
    let params = Parameters::<f32>::init(micro(), seed);
    let mut adam = AdamState::new(params.len());
    adam.m[0] = 0.5;
    adam.t = 3;
    Checkpoint { params, optimizer: Some(adam), step: 3, vocab_fingerprint: 0xFEED }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let ck = checkpoint(4);
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, &ck).unwrap();
    assert_eq!(&bytes[..5], MAGIC);
    let back = read_checkpoint(bytes.as_slice()).unwrap();
    assert_eq!(back, ck);
    let x = [1u32, 2, 3];
    assert_eq!(back.params.forward(&x).unwrap(), ck.params.forward(&x).unwrap());
}

#[test]
fn truncated_checkpoint_is_corrupt() {
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, &checkpoint(4)).unwrap();
    for cut in [3, 40, bytes.len() / 2, bytes.len() - 1] {
        let err = read_checkpoint(&bytes[..cut]).unwrap_err();
        assert!(matches!(err, LmError::Corrupt(_)), "cut {cut}: {err}");
    }
    bytes.push(0);
    assert!(matches!(read_checkpoint(bytes.as_slice()), Err(LmError::Corrupt(_))));
}

#[test]
fn shape_mismatch_is_rejected() {
    let ck = checkpoint(1);
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, &ck).unwrap();
    // d_model lives in the fifth header field
    bytes[5 + 16..5 + 20].copy_from_slice(&16u32.to_le_bytes());
    assert!(matches!(read_checkpoint(bytes.as_slice()), Err(LmError::ShapeMismatch(_))));
    let mut other = micro();
    other.d_model = 16;
    assert!(check_shape(ck.config(), &other).is_err());
    assert!(check_shape(ck.config(), &micro()).is_ok());
}

fn tiny_corpus() -> String {
    (0..6)
        .map(|i| format!("<|startoftext|>\n[QUESTION]: How to do {i}?\nq{i}\n[ANSWER]: do {i}\n<|endoftext|>\n"))
        .collect()
}

#[test]
fn training_is_seeded_and_reduces_loss() {
    let corpus = tiny_corpus();
    let vocab = crate::tokenizer::train_bpe(&corpus, 300).unwrap();
    let model = ModelConfig { vocab_size: vocab.len(), context_length: 32, n_layers: 1, n_heads: 2, d_model: 16, mlp_ratio: 4, dropout: 0.0 };
    let cfg = TrainConfig { steps: 60, batch_size: 2, learning_rate: 3e-3, ..TrainConfig::default() };
    let a = finetune(Init::Fresh(model), &corpus, &vocab, &cfg).unwrap();
    let b = finetune(Init::Fresh(model), &corpus, &vocab, &cfg).unwrap();
    assert_eq!(format_loss_log(&a.losses), format_loss_log(&b.losses));
    assert_eq!(a.losses.len(), 60);
    assert!(a.losses[59] < a.losses[0]);
    assert_eq!(a.checkpoint.step, 60);
    assert_eq!(a.checkpoint.vocab_fingerprint, vocab.fingerprint());

    let resumed = finetune(Init::Resume(a.checkpoint), &corpus, &vocab, &TrainConfig { steps: 5, ..cfg.clone() }).unwrap();
    assert_eq!(resumed.checkpoint.step, 65);
}

#[test]
fn answer_only_training_runs() {
    let corpus = tiny_corpus();
    let vocab = crate::tokenizer::train_bpe(&corpus, 300).unwrap();
    let model = ModelConfig { vocab_size: vocab.len(), context_length: 16, n_layers: 1, n_heads: 1, d_model: 8, mlp_ratio: 2, dropout: 0.1 };
    let cfg = TrainConfig { steps: 5, batch_size: 1, answer_only: true, ..TrainConfig::default() };
    assert_eq!(finetune(Init::Fresh(model), &corpus, &vocab, &cfg).unwrap().losses.len(), 5);
}

#[test]
fn resume_with_foreign_vocab_fails() {
    let corpus = tiny_corpus();
    let vocab = crate::tokenizer::train_bpe(&corpus, 300).unwrap();
    let other = Vocab::base();
    let model = ModelConfig { vocab_size: vocab.len(), context_length: 16, n_layers: 1, n_heads: 1, d_model: 8, mlp_ratio: 2, dropout: 0.0 };
    let cfg = TrainConfig { steps: 1, batch_size: 1, ..TrainConfig::default() };
    let out = finetune(Init::Fresh(model), &corpus, &vocab, &cfg).unwrap();
    let err = finetune(Init::Resume(out.checkpoint), &corpus, &other, &cfg).err().unwrap();
    assert!(matches!(err, LmError::FingerprintMismatch { .. }));
}

#[test]
fn corpus_without_documents_is_rejected() {
    let vocab = Vocab::base();
    let model = ModelConfig { vocab_size: vocab.len(), context_length: 16, n_layers: 1, n_heads: 1, d_model: 8, mlp_ratio: 2, dropout: 0.0 };
    let err = finetune(Init::Fresh(model), "plain text", &vocab, &TrainConfig::default()).err().unwrap();
    assert!(matches!(err, LmError::EmptyCorpus));
}
