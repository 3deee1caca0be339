//! The nine incremental-context questions, answer scoring and the
//! two-model comparison.

mod entities;
mod report;

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use crate::generate::{GenerateError, GeneratedAnswer};

pub use entities::extract_entities;
pub use report::{run_comparison, EvalReport, GroupVerdict, ModelAggregate, ReportRow, Verdict, REPORT_HEADER};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("API vocabulary is empty")]
    EmptyVocabulary,
    #[error("checkpoints were trained with different vocabularies ({0:016x} vs {1:016x})")]
    FingerprintMismatch(u64, u64),
    #[error(transparent)]
    Generate(#[from] GenerateError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum QuestionGroup {
    Window,
    Database,
    Array,
    Ssl,
}

impl fmt::Display for QuestionGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QuestionGroup::Window => "Window",
            QuestionGroup::Database => "Database",
            QuestionGroup::Array => "Array",
            QuestionGroup::Ssl => "SSL",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuestionSpec {
    pub id: &'static str,
    pub text: &'static str,
    pub group: QuestionGroup,
    /// 0: no API named, 1: a type named, 2: a type and a member named.
    pub context_level: u8,
    /// Each inner list is one expected entity; any alternative satisfies it.
    pub expected: Vec<Vec<&'static str>>,
    /// Expectations picked by this tool rather than taken from the study's commentary.
    pub supplied_expectations: bool,
}

impl QuestionSpec {
    pub fn expected_count(&self) -> usize {
        self.expected.len()
    }
}

pub fn builtin_questions() -> Vec<QuestionSpec> {
    use QuestionGroup::*;
    let q = |id, text, group, context_level, expected: &[&[&'static str]], supplied| QuestionSpec {
        id,
        text,
        group,
        context_level,
        expected: expected.iter().map(|alts| alts.to_vec()).collect(),
        supplied_expectations: supplied,
    };
    vec![
        q("Q1", "How to create a window?", Window, 0, &[&["JFrame"]], false),
        q("Q2", "How to create a window with JFrame", Window, 1, &[&["JFrame"]], false),
        q(
            "Q3",
            "How to create a window with JFrame and set dimension?",
            Window,
            2,
            &[&["JFrame"], &["setSize", "setPreferredSize"]],
            false,
        ),
        q("Q4", "How to open a DataBase connection?", Database, 0, &[&["DriverManager"], &["Connection"]], false),
        q("Q5", "How to open a DataBase connection JDBC?", Database, 1, &[&["DriverManager"], &["Connection"]], false),
        q(
            "Q6",
            "How to open a DataBase connection using JDBC and DriverManager?",
            Database,
            1,
            &[&["DriverManager"], &["getConnection"]],
            false,
        ),
        q(
            "Q7",
            "How to open a DataBase connection using JDBC and DriverManager and getConnection method?",
            Database,
            2,
            &[&["DriverManager"], &["getConnection"]],
            false,
        ),
        q("Q8", "How can I insert an element in array at a given position?", Array, 0, &[&["arraycopy", "add"]], true),
        q("Q9", "How to open a SSL connection?", Ssl, 0, &[&["SSLSocket", "SSLContext"]], true),
    ]
}

/// Known identifiers; anything API-like outside it counts as invented.
#[derive(Debug, Clone)]
pub struct ApiVocabulary {
    names: HashSet<String>,
    pub source: String,
}

const STANDARD_LIBRARY: &str = include_str!("../../data/java-stdlib.txt");

impl ApiVocabulary {
    /// One identifier per line; `#` starts a comment.
    pub fn from_text(text: &str, source: impl Into<String>) -> Result<Self, ExperimentError> {
        let names: HashSet<String> = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
        if names.is_empty() {
            return Err(ExperimentError::EmptyVocabulary);
        }
        Ok(Self { names, source: source.into() })
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        Self::from_text(&std::fs::read_to_string(path)?, path.display().to_string())
    }

    /// The bundled list of standard-library types and members.
    pub fn standard_library() -> Self {
        Self::from_text(STANDARD_LIBRARY, "bundled Java standard library list").expect("bundled list is not empty")
    }

    pub fn contains(&self, name: &str) -> bool {
        self.names.contains(name)
    }

    /// A qualified name is known when it, or its last segment, is listed.
    pub fn knows(&self, entity: &str) -> bool {
        self.contains(entity) || entity.rsplit('.').next().is_some_and(|last| self.contains(last))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnswerMetrics {
    pub expected_hit_rate: f64,
    /// Expected entities found, one name per satisfied expectation.
    pub mentioned_entities: Vec<String>,
    pub hallucinated_entities: Vec<String>,
    pub has_code_block: bool,
    pub answer_length_tokens: usize,
}

fn mentions(entities: &[String], name: &str) -> bool {
    entities.iter().any(|e| e == name || e.strip_suffix(name).is_some_and(|p| p.ends_with('.')))
}

pub fn score_answer(answer: &GeneratedAnswer, spec: &QuestionSpec, vocab: &ApiVocabulary) -> AnswerMetrics {
    let entities = extract_entities(&answer.answer_text);
    let mentioned: Vec<String> = spec
        .expected
        .iter()
        .filter_map(|alts| alts.iter().find(|a| mentions(&entities, a)))
        .map(|a| a.to_string())
        .collect();
    let hallucinated = entities
        .iter()
        .filter(|e| (e.contains('.') || entities::is_upper_camel(e)) && !vocab.knows(e))
        .cloned()
        .collect();
    AnswerMetrics {
        expected_hit_rate: if spec.expected.is_empty() { 0.0 } else { mentioned.len() as f64 / spec.expected.len() as f64 },
        mentioned_entities: mentioned,
        hallucinated_entities: hallucinated,
        has_code_block: answer.answer_text.contains("```"),
        answer_length_tokens: answer.new_tokens,
    }
}
