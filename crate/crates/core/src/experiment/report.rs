//! Two-model comparison and its tab-separated report.

use std::fmt::Write as _;

use super::{score_answer, AnswerMetrics, ApiVocabulary, ExperimentError, QuestionGroup, QuestionSpec};
use crate::generate::{generate, GeneratedAnswer, SampleConfig, StopReason};
use crate::lm::Checkpoint;
use crate::tokenizer::Vocab;

pub const REPORT_HEADER: &str =
    "model\tquestion_id\tcontext_level\tsample\thit_rate\tn_hallucinated\thas_code\tstop_reason";

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub model: String,
    pub question_id: String,
    pub group: QuestionGroup,
    pub context_level: u8,
    pub sample: usize,
    pub metrics: AnswerMetrics,
    pub stop_reason: StopReason,
    pub answer: GeneratedAnswer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelAggregate {
    pub model: String,
    /// `(context level, mean hit rate, rows)` for each level present.
    pub level_means: Vec<(u8, f64, usize)>,
    pub hallucinations: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Winner(String),
    Tie,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupVerdict {
    pub group: QuestionGroup,
    /// Mean hit rate per model over the group's rows.
    pub means: Vec<(String, f64)>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub aggregates: Vec<ModelAggregate>,
    pub verdicts: Vec<GroupVerdict>,
    pub notes: Vec<String>,
}

fn mean(values: impl Iterator<Item = f64>) -> (f64, usize) {
    let (sum, n) = values.fold((0.0, 0), |(s, n), v| (s + v, n + 1));
    (if n == 0 { 0.0 } else { sum / n as f64 }, n)
}

fn first_seen<T: PartialEq + Clone>(items: impl Iterator<Item = T>) -> Vec<T> {
    let mut out: Vec<T> = Vec::new();
    for item in items {
        if !out.contains(&item) {
            out.push(item);
        }
    }
    out
}

impl EvalReport {
    /// Derives aggregates and verdicts from per-sample rows.
    pub fn from_rows(rows: Vec<ReportRow>, notes: Vec<String>) -> Self {
        let models = first_seen(rows.iter().map(|r| r.model.clone()));
        let mut levels = first_seen(rows.iter().map(|r| r.context_level));
        levels.sort_unstable();
        let groups = first_seen(rows.iter().map(|r| r.group));

        let aggregates = models
            .iter()
            .map(|m| {
                let mine: Vec<&ReportRow> = rows.iter().filter(|r| &r.model == m).collect();
                let level_means = levels
                    .iter()
                    .filter_map(|&l| {
                        let (mean, n) = mean(mine.iter().filter(|r| r.context_level == l).map(|r| r.metrics.expected_hit_rate));
                        (n > 0).then_some((l, mean, n))
                    })
                    .collect();
                ModelAggregate {
                    model: m.clone(),
                    level_means,
                    hallucinations: mine.iter().map(|r| r.metrics.hallucinated_entities.len()).sum(),
                }
            })
            .collect();

        let verdicts = groups
            .into_iter()
            .map(|g| {
                let means: Vec<(String, f64)> = models
                    .iter()
                    .map(|m| {
                        let rates = rows.iter().filter(|r| r.group == g && &r.model == m).map(|r| r.metrics.expected_hit_rate);
                        (m.clone(), mean(rates).0)
                    })
                    .collect();
                let best = means.iter().map(|(_, v)| *v).fold(f64::NEG_INFINITY, f64::max);
                let leaders: Vec<&String> = means.iter().filter(|(_, v)| *v == best).map(|(m, _)| m).collect();
                let verdict = match leaders.as_slice() {
                    [one] => Verdict::Winner((*one).clone()),
                    _ => Verdict::Tie,
                };
                GroupVerdict { group: g, means, verdict }
            })
            .collect();

        Self { rows, aggregates, verdicts, notes }
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{REPORT_HEADER}").unwrap();
        for r in &self.rows {
            writeln!(
                s,
                "{}\t{}\t{}\t{}\t{:.6}\t{}\t{}\t{}",
                r.model,
                r.question_id,
                r.context_level,
                r.sample,
                r.metrics.expected_hit_rate,
                r.metrics.hallucinated_entities.len(),
                r.metrics.has_code_block,
                r.stop_reason
            )
            .unwrap();
        }
        writeln!(s, "#AGGREGATE").unwrap();
        for a in &self.aggregates {
            for (level, mean, n) in &a.level_means {
                writeln!(s, "mean_hit_rate\t{}\tlevel={level}\t{mean:.6}\trows={n}", a.model).unwrap();
            }
            writeln!(s, "hallucinations\t{}\t{}", a.model, a.hallucinations).unwrap();
        }
        for v in &self.verdicts {
            let winner = match &v.verdict {
                Verdict::Winner(m) => m.as_str(),
                Verdict::Tie => "tie",
            };
            let means: Vec<String> = v.means.iter().map(|(m, x)| format!("{m}={x:.6}")).collect();
            writeln!(s, "verdict\t{}\t{winner}\t{}", v.group, means.join(" ")).unwrap();
        }
        for n in &self.notes {
            writeln!(s, "#NOTE {n}").unwrap();
        }
        s
    }
}

/// Generates and scores answers from both models to every question.
///
/// Rows are ordered by model (how-to first), question, then sample.
pub fn run_comparison(
    howto: &Checkpoint,
    nonhowto: &Checkpoint,
    tokenizer: &Vocab,
    specs: &[QuestionSpec],
    vocab: &ApiVocabulary,
    config: &SampleConfig,
) -> Result<EvalReport, ExperimentError> {
    if howto.vocab_fingerprint != nonhowto.vocab_fingerprint {
        return Err(ExperimentError::FingerprintMismatch(howto.vocab_fingerprint, nonhowto.vocab_fingerprint));
    }
    let mut rows = Vec::new();
    for (model, ck) in [("howto", howto), ("nonhowto", nonhowto)] {
        for spec in specs {
            for answer in generate(ck, tokenizer, spec.text, config)? {
                rows.push(ReportRow {
                    model: model.to_string(),
                    question_id: spec.id.to_string(),
                    group: spec.group,
                    context_level: spec.context_level,
                    sample: answer.sample_index,
                    metrics: score_answer(&answer, spec, vocab),
                    stop_reason: answer.stop_reason,
                    answer,
                });
            }
        }
    }
    let mut notes = vec![
        "hit rates and hallucination counts are automated proxies, not judgments of answer quality".to_string(),
        format!("hallucinations are relative to: {}", vocab.source),
    ];
    let supplied: Vec<&str> = specs.iter().filter(|s| s.supplied_expectations).map(|s| s.id).collect();
    if !supplied.is_empty() {
        notes.push(format!("expected entities for {} were chosen by this tool", supplied.join(", ")));
    }
    Ok(EvalReport::from_rows(rows, notes))
}
