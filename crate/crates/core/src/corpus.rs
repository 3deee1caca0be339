//! Intent split and delimiter-wrapped training documents.
//!
//! A document looks like
//!
//! ```text
//! <|startoftext|>
//! [QUESTION]: {title}
//! {question_text}
//! [ANSWER]: {answer_text}
//! <|endoftext|>
//! ```
//!
//! followed by a newline. A delimiter string that occurs inside a payload is
//! escaped by a single backslash placed in front of it; scanners only treat
//! unescaped occurrences as structure.

use std::fmt;
use std::fs;
use std::path::Path;

use crate::ingest::QAPair;

pub const START_OF_TEXT: &str = "<|startoftext|>";
pub const QUESTION_MARKER: &str = "[QUESTION]";
pub const ANSWER_MARKER: &str = "[ANSWER]";
pub const END_OF_TEXT: &str = "<|endoftext|>";

/// The four delimiter strings, in document order.
pub const DELIMITERS: [&str; 4] = [START_OF_TEXT, QUESTION_MARKER, ANSWER_MARKER, END_OF_TEXT];

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CorpusError {
    #[error("question {question_id}: empty {field}")]
    EmptyField { question_id: u64, field: &'static str },
    #[error("question {question_id}: title spans several lines")]
    MultilineTitle { question_id: u64 },
    #[error("no pairs to build a corpus from")]
    EmptyInput,
    #[error("malformed document: {0}")]
    Malformed(String),
    #[error("delimiter integrity violated at byte {offset}: {message}")]
    Integrity { offset: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IntentLabel {
    HowTo,
    NonHowTo,
}

impl fmt::Display for IntentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IntentLabel::HowTo => "howto",
            IntentLabel::NonHowTo => "nonhowto",
        })
    }
}

fn contains_word_how(text: &str) -> bool {
    text.split(|c: char| !c.is_alphabetic())
        .any(|w| w.eq_ignore_ascii_case("how"))
}

/// How-to iff the word "how" appears in the title or the question body.
///
/// Matching is whole-word and case-insensitive; the answer is not consulted.
pub fn classify_intent(pair: &QAPair) -> IntentLabel {
    if contains_word_how(&pair.title) || contains_word_how(&pair.question_text) {
        IntentLabel::HowTo
    } else {
        IntentLabel::NonHowTo
    }
}

fn delimiter_at(s: &str, at: usize) -> Option<&'static str> {
    let rest = &s.as_bytes()[at..];
    DELIMITERS
        .iter()
        .copied()
        .find(|d| rest.starts_with(d.as_bytes()))
}

/// Puts a backslash in front of every delimiter string inside `payload`.
pub fn escape_payload(payload: &str) -> String {
    let mut out = String::with_capacity(payload.len());
    let mut i = 0;
    while i < payload.len() {
        if let Some(d) = delimiter_at(payload, i) {
            out.push('\\');
            out.push_str(d);
            i += d.len();
        } else {
            let c = payload[i..].chars().next().unwrap();
            out.push(c);
            i += c.len_utf8();
        }
    }
    out
}

/// Inverse of [`escape_payload`].
pub fn unescape_payload(escaped: &str) -> String {
    let mut out = String::with_capacity(escaped.len());
    let mut i = 0;
    while i < escaped.len() {
        if escaped.as_bytes()[i] == b'\\' {
            if let Some(d) = delimiter_at(escaped, i + 1) {
                out.push_str(d);
                i += 1 + d.len();
                continue;
            }
        }
        let c = escaped[i..].chars().next().unwrap();
        out.push(c);
        i += c.len_utf8();
    }
    out
}

/// A delimiter occurrence that is not escaped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DelimiterHit {
    pub offset: usize,
    pub delimiter: &'static str,
}

/// Lists structural delimiter occurrences in `text`, left to right.
pub fn find_delimiters(text: &str) -> Vec<DelimiterHit> {
    let bytes = text.as_bytes();
    let mut hits = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'<' || bytes[i] == b'[' {
            if let Some(d) = delimiter_at(text, i) {
                if i == 0 || bytes[i - 1] != b'\\' {
                    hits.push(DelimiterHit { offset: i, delimiter: d });
                }
                i += d.len();
                continue;
            }
        }
        i += 1;
    }
    hits
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusDocument {
    pub text: String,
    pub source_pair: u64,
}

/// Wraps a pair in the delimiter format.
pub fn format_document(pair: &QAPair) -> Result<CorpusDocument, CorpusError> {
    let question_id = pair.question_id;
    if pair.question_text.is_empty() {
        return Err(CorpusError::EmptyField { question_id, field: "question" });
    }
    if pair.answer_text.is_empty() {
        return Err(CorpusError::EmptyField { question_id, field: "answer" });
    }
    if pair.title.contains('\n') {
        return Err(CorpusError::MultilineTitle { question_id });
    }
    let text = format!(
        "{START_OF_TEXT}\n{QUESTION_MARKER}: {}\n{}\n{ANSWER_MARKER}: {}\n{END_OF_TEXT}\n",
        escape_payload(&pair.title),
        escape_payload(&pair.question_text),
        escape_payload(&pair.answer_text),
    );
    Ok(CorpusDocument { text, source_pair: question_id })
}

/// Payloads recovered from a formatted document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedDocument {
    pub title: String,
    pub question_text: String,
    pub answer_text: String,
}

/// Inverse of [`format_document`] on a single document.
pub fn parse_document(text: &str) -> Result<ParsedDocument, CorpusError> {
    let malformed = |m: &str| CorpusError::Malformed(m.to_string());
    let head = format!("{START_OF_TEXT}\n{QUESTION_MARKER}: ");
    let body = text
        .strip_prefix(head.as_str())
        .ok_or_else(|| malformed("missing document header"))?;
    let tail = format!("\n{END_OF_TEXT}");
    let body = body.strip_suffix('\n').unwrap_or(body);
    let body = body
        .strip_suffix(tail.as_str())
        .ok_or_else(|| malformed("missing end-of-text"))?;

    let (title, rest) = body.split_once('\n').ok_or_else(|| malformed("missing title line"))?;
    let answer_hit = find_delimiters(rest)
        .into_iter()
        .find(|h| h.delimiter == ANSWER_MARKER)
        .ok_or_else(|| malformed("missing answer marker"))?;
    let question = rest[..answer_hit.offset]
        .strip_suffix('\n')
        .ok_or_else(|| malformed("answer marker not at line start"))?;
    let answer = rest[answer_hit.offset + ANSWER_MARKER.len()..]
        .strip_prefix(": ")
        .ok_or_else(|| malformed("answer marker without ': '"))?;

    Ok(ParsedDocument {
        title: unescape_payload(title),
        question_text: unescape_payload(question),
        answer_text: unescape_payload(answer),
    })
}

/// Checks the delimiter grammar of a whole corpus and returns the document count.
///
/// Structural delimiters must repeat as start, question, answer, end.
pub fn scan_corpus(text: &str) -> Result<usize, CorpusError> {
    let mut docs = 0;
    for (i, hit) in find_delimiters(text).into_iter().enumerate() {
        let expected = DELIMITERS[i % 4];
        if hit.delimiter != expected {
            return Err(CorpusError::Integrity {
                offset: hit.offset,
                message: format!("found {} where {} was expected", hit.delimiter, expected),
            });
        }
        if expected == END_OF_TEXT {
            docs += 1;
        }
    }
    let trailing = find_delimiters(text).len() % 4;
    if trailing != 0 {
        return Err(CorpusError::Integrity {
            offset: text.len(),
            message: "corpus ends inside a document".into(),
        });
    }
    Ok(docs)
}

/// Splits a corpus back into its document strings.
pub fn split_documents(text: &str) -> Result<Vec<&str>, CorpusError> {
    scan_corpus(text)?;
    let hits = find_delimiters(text);
    let mut docs = Vec::with_capacity(hits.len() / 4);
    for chunk in hits.chunks(4) {
        let start = chunk[0].offset;
        let mut end = chunk[3].offset + END_OF_TEXT.len();
        if text[end..].starts_with('\n') {
            end += 1;
        }
        docs.push(&text[start..end]);
    }
    Ok(docs)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CorpusStats {
    pub total_pairs: u64,
    pub howto_pairs: u64,
    pub nonhowto_pairs: u64,
    pub howto_chars: u64,
    pub nonhowto_chars: u64,
}

impl CorpusStats {
    /// Sidecar report, one `key=value` per line.
    pub fn to_sidecar(&self) -> String {
        format!(
            "total={}\nhowto={}\nnonhowto={}\nhowto_chars={}\nnonhowto_chars={}\n",
            self.total_pairs, self.howto_pairs, self.nonhowto_pairs, self.howto_chars, self.nonhowto_chars
        )
    }

    pub fn from_sidecar(text: &str) -> Result<Self, CorpusError> {
        let mut stats = CorpusStats::default();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CorpusError::Malformed(format!("stats line {line:?}")))?;
            let value: u64 = value
                .trim()
                .parse()
                .map_err(|_| CorpusError::Malformed(format!("stats value {line:?}")))?;
            match key.trim() {
                "total" => stats.total_pairs = value,
                "howto" => stats.howto_pairs = value,
                "nonhowto" => stats.nonhowto_pairs = value,
                "howto_chars" => stats.howto_chars = value,
                "nonhowto_chars" => stats.nonhowto_chars = value,
                other => return Err(CorpusError::Malformed(format!("unknown stats key {other:?}"))),
            }
        }
        Ok(stats)
    }

    pub fn howto_share(&self) -> f64 {
        if self.total_pairs == 0 {
            0.0
        } else {
            self.howto_pairs as f64 / self.total_pairs as f64
        }
    }
}

/// Both corpora in memory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpora {
    pub howto: String,
    pub nonhowto: String,
    pub stats: CorpusStats,
}

/// Splits pairs by intent and concatenates their documents in input order.
pub fn build_corpora(pairs: &[QAPair]) -> Result<Corpora, CorpusError> {
    if pairs.is_empty() {
        return Err(CorpusError::EmptyInput);
    }
    let mut howto = String::new();
    let mut nonhowto = String::new();
    let mut stats = CorpusStats { total_pairs: pairs.len() as u64, ..Default::default() };
    for pair in pairs {
        let doc = format_document(pair)?;
        match classify_intent(pair) {
            IntentLabel::HowTo => {
                stats.howto_pairs += 1;
                howto.push_str(&doc.text);
            }
            IntentLabel::NonHowTo => {
                stats.nonhowto_pairs += 1;
                nonhowto.push_str(&doc.text);
            }
        }
    }
    stats.howto_chars = howto.chars().count() as u64;
    stats.nonhowto_chars = nonhowto.chars().count() as u64;
    Ok(Corpora { howto, nonhowto, stats })
}

impl Corpora {
    /// Writes `howto.txt`, `nonhowto.txt` and `stats.txt` into `dir`.
    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("howto.txt"), &self.howto)?;
        fs::write(dir.join("nonhowto.txt"), &self.nonhowto)?;
        fs::write(dir.join("stats.txt"), self.stats.to_sidecar())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(id: u64, title: &str, q: &str, a: &str) -> QAPair {
        QAPair {
            question_id: id,
            answer_id: id + 1000,
            title: title.into(),
            question_text: q.into(),
            answer_text: a.into(),
            tags: vec!["java".into()],
        }
    }

    #[test]
    fn intent_examples() {
        assert_eq!(classify_intent(&pair(1, "How to create a window?", "x", "y")), IntentLabel::HowTo);
        assert_eq!(classify_intent(&pair(1, "Why does JFrame flicker", "it flickers", "y")), IntentLabel::NonHowTo);
        assert_eq!(
            classify_intent(&pair(1, "Show me the error", "showing stack trace", "y")),
            IntentLabel::NonHowTo
        );
        assert_eq!(classify_intent(&pair(1, "Error", "but HOW?!", "y")), IntentLabel::HowTo);
        assert_eq!(classify_intent(&pair(1, "Error", "x", "how: in the answer")), IntentLabel::NonHowTo);
    }

    #[test]
    fn document_shape() {
        let doc = format_document(&pair(3, "How to open a DataBase connection?", "Need JDBC.", "use DriverManager")).unwrap();
        assert_eq!(
            doc.text,
            "<|startoftext|>\n[QUESTION]: How to open a DataBase connection?\nNeed JDBC.\n[ANSWER]: use DriverManager\n<|endoftext|>\n"
        );
        assert_eq!(doc.source_pair, 3);
    }

    #[test]
    fn payload_delimiters_are_escaped() {
        let doc = format_document(&pair(1, "t", "what is [ANSWER]", "a")).unwrap();
        assert!(doc.text.contains("what is \\[ANSWER]"));
        assert_eq!(scan_corpus(&doc.text), Ok(1));
        assert_eq!(parse_document(&doc.text).unwrap().question_text, "what is [ANSWER]");
    }

    #[test]
    fn empty_payloads_are_rejected() {
        assert!(matches!(format_document(&pair(1, "t", "", "a")), Err(CorpusError::EmptyField { field: "question", .. })));
        assert!(matches!(format_document(&pair(1, "t", "q", "")), Err(CorpusError::EmptyField { field: "answer", .. })));
    }

    #[test]
    fn three_pair_split() {
        let pairs = vec![
            pair(1, "How to X", "q", "a"),
            pair(2, "Why Y", "q", "a"),
            pair(3, "How can Z", "q", "a"),
        ];
        let c = build_corpora(&pairs).unwrap();
        assert_eq!((c.stats.total_pairs, c.stats.howto_pairs, c.stats.nonhowto_pairs), (3, 2, 1));
        assert_eq!(scan_corpus(&c.howto), Ok(2));
        assert_eq!(scan_corpus(&c.nonhowto), Ok(1));
        assert_eq!(c.stats.howto_chars, c.howto.chars().count() as u64);
    }

    #[test]
    fn single_pair_leaves_one_file_empty() {
        let c = build_corpora(&[pair(1, "Why", "q", "a")]).unwrap();
        assert!(c.howto.is_empty());
        assert_eq!((c.stats.total_pairs, c.stats.howto_pairs, c.stats.nonhowto_pairs), (1, 0, 1));
    }

    #[test]
    fn empty_input_is_an_error() {
        assert_eq!(build_corpora(&[]), Err(CorpusError::EmptyInput));
    }

    #[test]
    fn scanner_rejects_broken_order() {
        let text = "<|startoftext|>\n[ANSWER]: x\n[QUESTION]: y\n<|endoftext|>\n";
        assert!(matches!(scan_corpus(text), Err(CorpusError::Integrity { .. })));
        assert!(matches!(scan_corpus("<|startoftext|>\n[QUESTION]: y"), Err(CorpusError::Integrity { .. })));
    }

    #[test]
    fn sidecar_round_trip() {
        let stats = CorpusStats { total_pairs: 3, howto_pairs: 2, nonhowto_pairs: 1, howto_chars: 10, nonhowto_chars: 4 };
        assert_eq!(stats.to_sidecar(), "total=3\nhowto=2\nnonhowto=1\nhowto_chars=10\nnonhowto_chars=4\n");
        assert_eq!(CorpusStats::from_sidecar(&stats.to_sidecar()).unwrap(), stats);
    }

    #[test]
    fn split_documents_recovers_each_document() {
        let pairs = vec![pair(1, "a", "b", "c"), pair(2, "d", "e [QUESTION]", "f")];
        let text: String = pairs.iter().map(|p| format_document(p).unwrap().text).collect();
        let docs = split_documents(&text).unwrap();
        assert_eq!(docs.len(), 2);
        assert_eq!(docs[1], format_document(&pairs[1]).unwrap().text);
    }
}
