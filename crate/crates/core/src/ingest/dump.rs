//! Streaming reader over a Stack Overflow `Posts.xml` dump.
//!
//! The dump is one `<posts>` element holding millions of self-closing
//! `<row .../>` elements. Rows are decoded one at a time from a reused
//! buffer, so memory stays flat no matter how large the file is.

use std::io::BufRead;

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;

use super::IngestError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PostType {
    Question,
    Answer,
    Other,
}

impl PostType {
    fn from_id(id: u32) -> Self {
        match id {
            1 => PostType::Question,
            2 => PostType::Answer,
            _ => PostType::Other,
        }
    }
}

/// One `<row>` of the dump, reduced to the attributes the pipeline reads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawPost {
    pub id: u64,
    pub post_type: PostType,
    /// Present for answers only.
    pub parent_id: Option<u64>,
    /// Present for questions only.
    pub accepted_answer_id: Option<u64>,
    /// Lowercase tag names; always empty for answers.
    pub tags: Vec<String>,
    pub title: Option<String>,
    pub body_html: String,
    pub score: i64,
}

/// Row counters kept while reading.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseStats {
    /// Rows decoded into a [`RawPost`].
    pub rows: u64,
    /// Rows dropped because a required attribute was missing or unreadable.
    pub skipped: u64,
}

/// Lazy iterator of posts over any buffered byte stream.
///
/// Yields `Err` at most once, for a fatal XML error, and then stops.
pub struct PostReader<R: BufRead> {
    reader: Reader<R>,
    buf: Vec<u8>,
    stats: ParseStats,
    done: bool,
}

/// Reads posts from `input` in file order.
pub fn parse_dump<R: BufRead>(input: R) -> PostReader<R> {
    PostReader {
        reader: Reader::from_reader(input),
        buf: Vec::with_capacity(16 * 1024),
        stats: ParseStats::default(),
        done: false,
    }
}

impl<R: BufRead> PostReader<R> {
    pub fn stats(&self) -> ParseStats {
        self.stats
    }
}

impl<R: BufRead> Iterator for PostReader<R> {
    type Item = Result<RawPost, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        loop {
            self.buf.clear();
            let event = match self.reader.read_event_into(&mut self.buf) {
                Ok(event) => event,
                Err(err) => {
                    self.done = true;
                    return Some(Err(IngestError::Xml {
                        offset: self.reader.error_position(),
                        message: err.to_string(),
                    }));
                }
            };
            match event {
                Event::Empty(ref e) | Event::Start(ref e) if e.name().as_ref() == b"row" => {
                    match decode_row(e) {
                        Some(post) => {
                            self.stats.rows += 1;
                            return Some(Ok(post));
                        }
                        None => self.stats.skipped += 1,
                    }
                }
                Event::Eof => {
                    self.done = true;
                    return None;
                }
                _ => {}
            }
        }
    }
}

#[derive(Default)]
struct RowAttrs {
    id: Option<u64>,
    post_type: Option<u32>,
    parent_id: Option<u64>,
    accepted_answer_id: Option<u64>,
    tags: Option<String>,
    title: Option<String>,
    body: Option<String>,
    score: Option<i64>,
}

/// Returns `None` for rows that cannot be turned into a post.
fn decode_row(e: &BytesStart<'_>) -> Option<RawPost> {
    let mut attrs = RowAttrs::default();
    for attr in e.attributes() {
        let attr = attr.ok()?;
        let value = attr.unescape_value().ok()?;
        match attr.key.as_ref() {
            b"Id" => attrs.id = Some(value.trim().parse().ok()?),
            b"PostTypeId" => attrs.post_type = Some(value.trim().parse().ok()?),
            b"ParentId" => attrs.parent_id = value.trim().parse().ok(),
            b"AcceptedAnswerId" => attrs.accepted_answer_id = value.trim().parse().ok(),
            b"Tags" => attrs.tags = Some(value.into_owned()),
            b"Title" => attrs.title = Some(value.into_owned()),
            b"Body" => attrs.body = Some(value.into_owned()),
            b"Score" => attrs.score = value.trim().parse().ok(),
            _ => {}
        }
    }

    let id = attrs.id?;
    let post_type = PostType::from_id(attrs.post_type?);
    let (parent_id, accepted_answer_id, tags) = match post_type {
        PostType::Question => (
            None,
            attrs.accepted_answer_id,
            attrs.tags.as_deref().map(split_tags).unwrap_or_default(),
        ),
        // An answer without a parent violates the dump schema.
        PostType::Answer => (Some(attrs.parent_id?), None, Vec::new()),
        PostType::Other => (
            attrs.parent_id,
            None,
            attrs.tags.as_deref().map(split_tags).unwrap_or_default(),
        ),
    };

    Some(RawPost {
        id,
        post_type,
        parent_id,
        accepted_answer_id,
        tags,
        title: attrs.title,
        body_html: attrs.body.unwrap_or_default(),
        score: attrs.score.unwrap_or(0),
    })
}

/// Splits `<java><swing>` (older dumps) or `|java|swing|` (newer dumps).
pub fn split_tags(raw: &str) -> Vec<String> {
    raw.split(['<', '>', '|'])
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn posts(xml: &str) -> (Vec<RawPost>, ParseStats) {
        let mut reader = parse_dump(xml.as_bytes());
        let posts = reader.by_ref().collect::<Result<Vec<_>, _>>().unwrap();
        (posts, reader.stats())
    }

    #[test]
    fn question_row_maps_attributes() {
        let (p, _) = posts(
            r#"<posts><row Id="3" PostTypeId="1" AcceptedAnswerId="7" Tags="&lt;java&gt;&lt;swing&gt;" Title="T" Body="&lt;p&gt;x&lt;/p&gt;" Score="4" /></posts>"#,
        );
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].post_type, PostType::Question);
        assert_eq!(p[0].tags, vec!["java", "swing"]);
        assert_eq!(p[0].accepted_answer_id, Some(7));
        assert_eq!(p[0].body_html, "<p>x</p>");
        assert_eq!(p[0].score, 4);
    }

    #[test]
    fn answer_row_has_parent() {
        let (p, _) = posts(r#"<posts><row Id="7" PostTypeId="2" ParentId="3" Body="b"/></posts>"#);
        assert_eq!(p[0].post_type, PostType::Answer);
        assert_eq!(p[0].parent_id, Some(3));
        assert!(p[0].tags.is_empty());
    }

    #[test]
    fn rows_missing_required_attributes_are_skipped() {
        let (p, stats) = posts(
            r#"<posts><row Id="1" Body="no type"/><row PostTypeId="1"/><row Id="x" PostTypeId="1"/><row Id="2" PostTypeId="5"/></posts>"#,
        );
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].post_type, PostType::Other);
        assert_eq!(stats, ParseStats { rows: 1, skipped: 3 });
    }

    #[test]
    fn malformed_xml_reports_offset() {
        let xml = r#"<posts><row Id="1" PostTypeId="1"/></wrong>"#;
        let results: Vec<_> = parse_dump(xml.as_bytes()).collect();
        assert!(results[0].is_ok());
        match &results[1] {
            Err(IngestError::Xml { offset, .. }) => assert!(*offset > 0),
            other => panic!("expected xml error, got {other:?}"),
        }
        assert_eq!(results.len(), 2);
    }

    #[test]
    fn pipe_delimited_tags() {
        assert_eq!(split_tags("|java|Swing|"), vec!["java", "swing"]);
    }
}
