//! Answer dump: the text record stream `generate` writes and `experiment` reads.
//!
//! ```text
//! #RUN max_new_tokens=250 temperature=0.7 samples=5 batch_size=5 top_k=none seed=42
//! #QUESTION
//! How to create a window?
//! #SAMPLE 0 reason=EndOfText tokens=31
//! Use JFrame.
//!
//! ```
//!
//! Payload lines that start with `#` or `\` get a leading `\`.

use std::io::{self, Write};

use super::{build_prompt, GenerateError, GeneratedAnswer, SampleConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct QuestionAnswers {
    pub question: String,
    pub answers: Vec<GeneratedAnswer>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnswerDump {
    pub config: SampleConfig,
    pub questions: Vec<QuestionAnswers>,
}

fn write_payload<W: Write>(w: &mut W, text: &str) -> io::Result<()> {
    for line in text.split('\n') {
        if line.starts_with('#') || line.starts_with('\\') {
            w.write_all(b"\\")?;
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

fn run_line(c: &SampleConfig) -> String {
    let top_k = c.top_k.map_or("none".to_string(), |k| k.to_string());
    format!(
        "#RUN max_new_tokens={} temperature={} samples={} batch_size={} top_k={} seed={}",
        c.max_new_tokens, c.temperature, c.n_samples, c.batch_size, top_k, c.seed
    )
}

/// Writes answers grouped by consecutive question.
pub fn write_answer_dump<W: Write>(mut w: W, config: &SampleConfig, answers: &[GeneratedAnswer]) -> io::Result<()> {
    writeln!(w, "{}", run_line(config))?;
    let mut current: Option<&str> = None;
    for a in answers {
        if current != Some(a.question_text.as_str()) {
            writeln!(w, "#QUESTION")?;
            write_payload(&mut w, &a.question_text)?;
            current = Some(&a.question_text);
        }
        writeln!(w, "#SAMPLE {} reason={} tokens={}", a.sample_index, a.stop_reason, a.new_tokens)?;
        write_payload(&mut w, &a.answer_text)?;
        writeln!(w)?;
    }
    w.flush()
}

fn parse_run(line: &str, line_no: usize) -> Result<SampleConfig, GenerateError> {
    let err = |m: String| GenerateError::Dump { line: line_no, message: m };
    let rest = line.strip_prefix("#RUN").ok_or_else(|| err("dump must start with #RUN".into()))?;
    let mut c = SampleConfig::default();
    for field in rest.split_whitespace() {
        let (k, v) = field.split_once('=').ok_or_else(|| err(format!("bad field {field:?}")))?;
        let bad = |_| err(format!("bad value for {k}: {v:?}"));
        match k {
            "max_new_tokens" => c.max_new_tokens = v.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            "temperature" => c.temperature = v.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
            "samples" => c.n_samples = v.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            "batch_size" => c.batch_size = v.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            "seed" => c.seed = v.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            "top_k" if v == "none" => c.top_k = None,
            "top_k" => c.top_k = Some(v.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?),
            _ => return Err(err(format!("unknown field {k}"))),
        }
    }
    Ok(c)
}

enum Block {
    Question,
    Sample { index: usize, reason: super::StopReason, tokens: usize },
}

fn close(
    open: Option<Block>,
    mut payload: Vec<String>,
    questions: &mut Vec<QuestionAnswers>,
    line_no: usize,
) -> Result<(), GenerateError> {
    let (index, reason, tokens) = match open {
        None if payload.is_empty() => return Ok(()),
        None => return Err(GenerateError::Dump { line: line_no, message: "text outside any record".into() }),
        Some(Block::Question) => {
            questions.push(QuestionAnswers { question: payload.join("\n"), answers: Vec::new() });
            return Ok(());
        }
        Some(Block::Sample { index, reason, tokens }) => (index, reason, tokens),
    };
    if payload.last().map(String::as_str) == Some("") {
        payload.pop();
    }
    let q = questions
        .last_mut()
        .ok_or(GenerateError::Dump { line: line_no, message: "sample before any question".into() })?;
    let question_text = q.question.clone();
    q.answers.push(GeneratedAnswer {
        prompt_text: build_prompt(&question_text)?,
        question_text,
        sample_index: index,
        answer_text: payload.join("\n"),
        stop_reason: reason,
        new_tokens: tokens,
    });
    Ok(())
}

/// Parses a dump written by [`write_answer_dump`].
pub fn parse_answer_dump(text: &str) -> Result<AnswerDump, GenerateError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (n, first) = lines.next().ok_or(GenerateError::Dump { line: 1, message: "empty dump".into() })?;
    let config = parse_run(first, n)?;
    let mut questions: Vec<QuestionAnswers> = Vec::new();
    let mut open: Option<Block> = None;
    let mut payload: Vec<String> = Vec::new();

    let mut last = n;
    for (n, line) in lines {
        last = n;
        if line == "#QUESTION" {
            close(open.take(), std::mem::take(&mut payload), &mut questions, n)?;
            open = Some(Block::Question);
        } else if let Some(rest) = line.strip_prefix("#SAMPLE ") {
            close(open.take(), std::mem::take(&mut payload), &mut questions, n)?;
            let err = |m: &str| GenerateError::Dump { line: n, message: m.to_string() };
            let mut parts = rest.split_whitespace();
            let index = parts.next().and_then(|s| s.parse().ok()).ok_or_else(|| err("bad sample index"))?;
            let mut reason = None;
            let mut tokens = None;
            for part in parts {
                match part.split_once('=') {
                    Some(("reason", v)) => reason = Some(v.parse().map_err(|e: String| err(&e))?),
                    Some(("tokens", v)) => tokens = Some(v.parse().map_err(|_| err("bad token count"))?),
                    _ => return Err(err("unknown sample field")),
                }
            }
            let reason = reason.ok_or_else(|| err("missing reason"))?;
            open = Some(Block::Sample { index, reason, tokens: tokens.unwrap_or(0) });
        } else if line.starts_with('#') {
            return Err(GenerateError::Dump { line: n, message: format!("unknown record {line:?}") });
        } else {
            payload.push(line.strip_prefix('\\').unwrap_or(line).to_string());
        }
    }
    close(open, payload, &mut questions, last)?;
    Ok(AnswerDump { config, questions })
}
