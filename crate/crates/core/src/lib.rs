//! Q&A corpus construction, BPE tokenization and a small GPT-2 style
//! language model, plus the generation protocol and answer scoring used to
//! compare models fine-tuned on how-to and non-how-to questions.

pub mod corpus;
pub mod experiment;
pub mod generate;
pub mod ingest;
pub mod lm;
pub mod synth;
pub mod tokenizer;

pub use corpus::{build_corpora, Corpora, CorpusStats, IntentLabel};
pub use experiment::{builtin_questions, run_comparison, ApiVocabulary, EvalReport, QuestionSpec};
pub use generate::{generate, GeneratedAnswer, SampleConfig, StopReason};
pub use ingest::{ingest_dump, QAPair, RawPost};
pub use lm::{Checkpoint, ModelConfig, Parameters, TrainConfig};
pub use tokenizer::{TokenId, Vocab};
