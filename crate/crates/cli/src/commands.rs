use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crowdqa::corpus::build_corpora;
use crowdqa::experiment::{builtin_questions, run_comparison, ApiVocabulary};
use crowdqa::generate::{generate, write_answer_dump, SampleConfig};
use crowdqa::ingest::{ingest_dump, read_archive};
use crowdqa::lm::{
    check_shape, finetune_with, format_loss_log, load_checkpoint, save_checkpoint, Checkpoint, Init, ModelConfig,
    TrainConfig, FINETUNE_LEARNING_RATE, FRESH_LEARNING_RATE,
};
use crowdqa::synth::{write_dump, DumpSpec};
use crowdqa::tokenizer::{train_bpe_multi, Vocab};

use crate::config::ConfigFile;
use crate::{Cli, Command, Failure, FinetuneArgs, SamplingArgs};

pub fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = ConfigFile::load(cli.config.as_deref())?;
    match cli.command {
        Command::Ingest { dump, tag, out } => ingest(&cfg, &dump, tag, &out),
        Command::BuildCorpus { pairs, out_dir } => build_corpus(&pairs, &out_dir),
        Command::TrainTokenizer { corpora, vocab_size, out } => train_tokenizer(&cfg, &corpora, vocab_size, &out),
        Command::Finetune(args) => finetune(&cfg, args),
        Command::Generate { checkpoint, vocab, questions, sampling, out } => {
            generate_cmd(&cfg, &checkpoint, &vocab, &questions, &sampling, out.as_deref())
        }
        Command::Evaluate { howto, nonhowto, vocab, api_vocab, sampling, out, answers_dir } => evaluate(
            &cfg,
            [&howto, &nonhowto],
            &vocab,
            api_vocab.as_deref(),
            &sampling,
            out.as_deref(),
            answers_dir.as_deref(),
        ),
        Command::Repl { checkpoint, vocab, sampling } => repl(&cfg, &checkpoint, &vocab, &sampling),
        Command::SynthDump { out, threads, max_bytes, seed, noise, java_share } => {
            if !(0.0..=1.0).contains(&java_share) {
                return Err(Failure::Usage("--java-share must lie in [0, 1]".into()));
            }
            let seed = cfg.seed(seed)?;
            eprintln!("seed: {seed}");
            let spec = DumpSpec { seed, threads, java_share, noise, max_bytes };
            let mut w = BufWriter::new(File::create(&out)?);
            let s = write_dump(&spec, &mut w)?;
            w.flush()?;
            eprintln!("wrote {} rows, {} bytes; expect {} java pairs", s.rows, s.bytes, s.expected_pairs);
            Ok(())
        }
    }
}

fn require(paths: &[&Path]) -> Result<(), Failure> {
    match paths.iter().find(|p| !p.exists()) {
        Some(p) => Err(Failure::Runtime(format!("input not found: {}", p.display()))),
        None => Ok(()),
    }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn load_vocab(path: &Path) -> Result<Vocab, Failure> {
    Ok(Vocab::deserialize(&read_text(path)?)?)
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn ingest(cfg: &ConfigFile, dump: &Path, tag: Option<String>, out: &Path) -> Result<(), Failure> {
    require(&[dump])?;
    let tag = cfg.pick(tag, "tag", "java".to_string())?.to_lowercase();
    let w = BufWriter::new(File::create(out)?);
    let r = ingest_dump(dump, &tag, w)?;
    eprintln!(
        "rows {} ({} skipped), {} questions tagged {tag}, {} pairs written",
        r.parse.rows, r.parse.skipped, r.selected_questions, r.join.pairs
    );
    Ok(())
}

fn build_corpus(pairs: &Path, out_dir: &Path) -> Result<(), Failure> {
    require(&[pairs])?;
    let pairs = read_archive(BufReader::new(File::open(pairs)?))?;
    let corpora = build_corpora(&pairs)?;
    corpora.write_to(out_dir)?;
    let s = corpora.stats;
    eprintln!("{} pairs: {} how-to, {} other", s.total_pairs, s.howto_pairs, s.nonhowto_pairs);
    Ok(())
}

fn train_tokenizer(cfg: &ConfigFile, corpora: &[PathBuf], size: Option<usize>, out: &Path) -> Result<(), Failure> {
    let paths: Vec<&Path> = corpora.iter().map(PathBuf::as_path).collect();
    require(&paths)?;
    let size = cfg.pick(size, "vocab_size", 8192)?;
    let texts = paths.iter().map(|p| read_text(p)).collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let vocab = train_bpe_multi(&refs, size)?;
    fs::write(out, vocab.serialize())?;
    eprintln!("vocabulary of {} tokens, fingerprint {:016x}", vocab.len(), vocab.fingerprint());
    Ok(())
}

fn finetune(cfg: &ConfigFile, a: FinetuneArgs) -> Result<(), Failure> {
    let mut inputs = vec![a.corpus.as_path(), a.vocab.as_path()];
    inputs.extend(a.init.as_deref());
    require(&inputs)?;

    let preset_name = cfg.pick_opt(a.preset, "preset")?;
    let preset = preset_name
        .as_deref()
        .map(|n| ModelConfig::preset(n).ok_or_else(|| Failure::Usage(format!("unknown preset {n:?}; use tiny or gpt2-124m"))))
        .transpose()?;
    let seed = cfg.seed(a.seed)?;
    eprintln!("seed: {seed}");
    let default_lr = if a.init.is_some() { FINETUNE_LEARNING_RATE } else { FRESH_LEARNING_RATE };
    let train = TrainConfig {
        steps: cfg.pick(a.steps, "steps", 1000)?,
        batch_size: cfg.pick(a.batch_size, "batch_size", 4)?,
        learning_rate: cfg.pick(a.learning_rate, "learning_rate", default_lr)?,
        seed,
        answer_only: a.answer_only || cfg.pick(None, "answer_only", false)?,
        ..TrainConfig::default()
    };
    train.validate()?;

    let vocab = load_vocab(&a.vocab)?;
    let corpus = read_text(&a.corpus)?;
    let init = match &a.init {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            if let Some(mut expected) = preset {
                expected.vocab_size = ck.config().vocab_size;
                check_shape(ck.config(), &expected)?;
            }
            Init::Resume(ck)
        }
        None => {
            let mut model = preset.unwrap_or_else(ModelConfig::tiny);
            model.vocab_size = vocab.len();
            Init::Fresh(model)
        }
    };

    let every = (train.steps / 10).max(1);
    let outcome = finetune_with(init, &corpus, &vocab, &train, |step, loss| {
        if step % every == 0 || step == train.steps {
            eprintln!("step {step}/{} loss {loss:.4}", train.steps);
        }
    })?;
    save_checkpoint(&a.out, &outcome.checkpoint)?;
    if let Some(log) = &a.loss_log {
        fs::write(log, format_loss_log(&outcome.losses))?;
    }
    Ok(())
}

fn sample_config(cfg: &ConfigFile, s: &SamplingArgs) -> Result<SampleConfig, Failure> {
    let d = SampleConfig::default();
    let seed = cfg.seed(s.seed)?;
    eprintln!("seed: {seed}");
    let config = SampleConfig {
        max_new_tokens: cfg.pick(s.max_new_tokens, "max_new_tokens", d.max_new_tokens)?,
        temperature: cfg.pick(s.temperature, "temperature", d.temperature)?,
        n_samples: cfg.pick(s.samples, "samples", d.n_samples)?,
        batch_size: cfg.pick(s.batch_size, "sample_batch_size", d.batch_size)?,
        top_k: cfg.pick_opt(s.top_k, "top_k")?,
        seed,
    };
    config.validate()?;
    Ok(config)
}

fn load_model(checkpoint: &Path, vocab: &Path) -> Result<(Checkpoint, Vocab), Failure> {
    require(&[checkpoint, vocab])?;
    let vocab = load_vocab(vocab)?;
    let ck = load_checkpoint(checkpoint)?;
    Ok((ck, vocab))
}

fn generate_cmd(
    cfg: &ConfigFile,
    checkpoint: &Path,
    vocab: &Path,
    questions: &[String],
    sampling: &SamplingArgs,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let config = sample_config(cfg, sampling)?;
    let (ck, vocab) = load_model(checkpoint, vocab)?;
    let mut answers = Vec::new();
    for q in questions {
        answers.extend(generate(&ck, &vocab, q, &config)?);
    }
    let mut w = open_output(out)?;
    write_answer_dump(&mut w, &config, &answers)?;
    w.flush()?;
    Ok(())
}

fn evaluate(
    cfg: &ConfigFile,
    checkpoints: [&Path; 2],
    vocab: &Path,
    api_vocab: Option<&Path>,
    sampling: &SamplingArgs,
    out: Option<&Path>,
    answers_dir: Option<&Path>,
) -> Result<(), Failure> {
    let config = sample_config(cfg, sampling)?;
    let mut inputs = vec![checkpoints[0], checkpoints[1], vocab];
    inputs.extend(api_vocab);
    require(&inputs)?;
    let api = match api_vocab {
        Some(p) => ApiVocabulary::load(p)?,
        None => ApiVocabulary::standard_library(),
    };
    let tokenizer = load_vocab(vocab)?;
    let howto = load_checkpoint(checkpoints[0])?;
    let nonhowto = load_checkpoint(checkpoints[1])?;
    let report = run_comparison(&howto, &nonhowto, &tokenizer, &builtin_questions(), &api, &config)?;

    if let Some(dir) = answers_dir {
        fs::create_dir_all(dir)?;
        for model in ["howto", "nonhowto"] {
            let answers: Vec<_> = report.rows.iter().filter(|r| r.model == model).map(|r| r.answer.clone()).collect();
            let mut w = BufWriter::new(File::create(dir.join(format!("{model}.answers")))?);
            write_answer_dump(&mut w, &config, &answers)?;
            w.flush()?;
        }
    }
    let mut w = open_output(out)?;
    w.write_all(report.to_tsv().as_bytes())?;
    w.flush()?;
    for v in &report.verdicts {
        eprintln!("{}: {:?}", v.group, v.verdict);
    }
    Ok(())
}

fn repl(cfg: &ConfigFile, checkpoint: &Path, vocab: &Path, sampling: &SamplingArgs) -> Result<(), Failure> {
    let config = sample_config(cfg, sampling)?;
    let (ck, vocab) = load_model(checkpoint, vocab)?;
    let stdout = io::stdout();
    let mut lines = io::stdin().lock().lines();
    loop {
        eprint!("> ");
        let Some(line) = lines.next() else { break };
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match generate(&ck, &vocab, &line, &config) {
            Ok(answers) => {
                let mut out = stdout.lock();
                for a in answers {
                    writeln!(out, "--- sample {} ({}, {} tokens)\n{}\n", a.sample_index, a.stop_reason, a.new_tokens, a.answer_text)?;
                }
                out.flush()?;
            }
            Err(e) => {
                let f = Failure::from(e);
                if matches!(f, Failure::Integrity(_)) {
                    return Err(f);
                }
                eprintln!("error: {f}");
            }
        }
    }
    Ok(())
}
