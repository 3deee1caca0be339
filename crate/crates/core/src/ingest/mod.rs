//! Stack Overflow dump ingestion: streaming row reader, body normalization,
//! tag selection and the accepted-answer join.

mod archive;
mod dump;
mod html;
mod join;

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;

pub use archive::{escape_field, parse_pair_line, read_archive, unescape_field, write_pair};
pub use dump::{parse_dump, split_tags, ParseStats, PostReader, PostType, RawPost};
pub use html::{normalize_body, normalize_title};
pub use join::{is_selected, join_pairs, select_questions, AnswerIndex, DropReason, JoinStats, QAPair};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("malformed XML at byte {offset}: {message}")]
    Xml { offset: u64, message: String },
    #[error("pair archive line {line}: {message}")]
    Archive { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Counters for a whole ingest run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub parse: ParseStats,
    pub selected_questions: u64,
    pub join: JoinStats,
}

const READ_BUFFER: usize = 256 * 1024;

fn open_posts(path: &Path) -> Result<PostReader<BufReader<File>>, IngestError> {
    let file = File::open(path)?;
    Ok(parse_dump(BufReader::with_capacity(READ_BUFFER, file)))
}

/// Streams a dump file three times and writes the pair archive to `out`.
///
/// Pass one records the accepted-answer ids of selected questions, pass two
/// indexes just those answers, pass three re-reads the questions and emits
/// pairs in file order. Memory holds only the answer index.
pub fn ingest_dump<W: Write>(path: &Path, required_tag: &str, mut out: W) -> Result<IngestReport, IngestError> {
    let mut report = IngestReport::default();
    let mut index = AnswerIndex::new();

    let mut reader = open_posts(path)?;
    for post in reader.by_ref() {
        let post = post?;
        if is_selected(&post, required_tag) {
            index.want(&post);
            report.selected_questions += 1;
        }
    }
    report.parse = reader.stats();

    for post in open_posts(path)? {
        index.offer(&post?);
    }

    for post in open_posts(path)? {
        let post = post?;
        if !is_selected(&post, required_tag) {
            continue;
        }
        if let Some(pair) = join::join_one(&index, &post, &mut report.join) {
            write_pair(&mut out, &pair)?;
        }
    }
    out.flush()?;
    Ok(report)
}
