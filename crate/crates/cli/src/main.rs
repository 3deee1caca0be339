//! `crowdqa`: the corpus, training, generation and evaluation pipeline.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crowdqa::corpus::CorpusError;
use crowdqa::experiment::ExperimentError;
use crowdqa::generate::GenerateError;
use crowdqa::ingest::IngestError;
use crowdqa::lm::LmError;
use crowdqa::tokenizer::TokenizerError;

#[derive(Parser)]
#[command(name = "crowdqa", version, about = "Stack Overflow Q&A corpora, a small GPT-style model, and answer evaluation")]
struct Cli {
    /// `key = value` defaults; command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Join questions with their accepted answers into a pair archive.
    Ingest {
        #[arg(long)]
        dump: PathBuf,
        /// Required question tag [default: java]
        #[arg(long)]
        tag: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split a pair archive into how-to and non-how-to corpora.
    BuildCorpus {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Learn a BPE vocabulary from one or more corpora.
    TrainTokenizer {
        #[arg(long = "corpus", required = true)]
        corpora: Vec<PathBuf>,
        /// [default: 8192]
        #[arg(long)]
        vocab_size: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a corpus, from scratch or from a checkpoint.
    Finetune(FinetuneArgs),
    /// Sample answers to questions and write an answer dump.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long = "question", required = true)]
        questions: Vec<String>,
        #[command(flatten)]
        sampling: SamplingArgs,
        /// Answer dump path [default: stdout]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Answer the nine built-in questions with both models and report.
    Evaluate {
        #[arg(long)]
        howto: PathBuf,
        #[arg(long)]
        nonhowto: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// Known identifiers, one per line [default: bundled standard library list]
        #[arg(long)]
        api_vocab: Option<PathBuf>,
        #[command(flatten)]
        sampling: SamplingArgs,
        /// Report path [default: stdout]
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write each model's answers as `<model>.answers` here.
        #[arg(long)]
        answers_dir: Option<PathBuf>,
    },
    /// Read questions from stdin and print sampled answers.
    Repl {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[command(flatten)]
        sampling: SamplingArgs,
    },
    /// Write a synthetic Posts.xml dump.
    SynthDump {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        threads: usize,
        /// Keep adding threads until the file reaches this size.
        #[arg(long)]
        max_bytes: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Include malformed rows and broken answer links.
        #[arg(long)]
        noise: bool,
        #[arg(long, default_value_t = 1.0)]
        java_share: f64,
    },
}

#[derive(Args)]
struct FinetuneArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Continue from this checkpoint instead of a fresh initialization.
    #[arg(long)]
    init: Option<PathBuf>,
    /// tiny | gpt2-124m [default: tiny]
    #[arg(long)]
    preset: Option<String>,
    /// [default: 1000]
    #[arg(long)]
    steps: Option<usize>,
    /// [default: 4]
    #[arg(long)]
    batch_size: Option<usize>,
    /// [default: 3e-4 fresh, 2e-5 with --init]
    #[arg(long)]
    learning_rate: Option<f32>,
    #[arg(long)]
    seed: Option<u64>,
    /// Supervise answer tokens only.
    #[arg(long)]
    answer_only: bool,
    /// Write `step<TAB>loss` lines here.
    #[arg(long)]
    loss_log: Option<PathBuf>,
}

#[derive(Args)]
struct SamplingArgs {
    /// [default: 250]
    #[arg(long)]
    max_new_tokens: Option<usize>,
    /// [default: 0.7]
    #[arg(long)]
    temperature: Option<f32>,
    /// [default: 5]
    #[arg(long)]
    samples: Option<usize>,
    /// Samples decoded concurrently [default: 5]
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
    Integrity(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Runtime(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Integrity(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) | Failure::Integrity(m) => f.write_str(m),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<LmError> for Failure {
    fn from(e: LmError) -> Self {
        match e {
            LmError::FingerprintMismatch { .. } | LmError::ShapeMismatch(_) | LmError::Corrupt(_) => {
                Failure::Integrity(e.to_string())
            }
            LmError::InvalidConfig(_) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<GenerateError> for Failure {
    fn from(e: GenerateError) -> Self {
        match e {
            GenerateError::Lm(e) => e.into(),
            GenerateError::InvalidConfig(_) | GenerateError::EmptyQuestion => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Generate(e) => e.into(),
            ExperimentError::FingerprintMismatch(..) => Failure::Integrity(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<IngestError> for Failure {
    fn from(e: IngestError) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<CorpusError> for Failure {
    fn from(e: CorpusError) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<TokenizerError> for Failure {
    fn from(e: TokenizerError) -> Self {
        match e {
            TokenizerError::TargetTooSmall { .. } => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
