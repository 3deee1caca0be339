//! Pair archive: one tab-separated record per line.
//!
//! Columns are `question_id`, `answer_id`, title, question text, answer text
//! and the `|`-joined tags. Inside text columns a backslash is written as
//! `\\`, a newline as `\n`, a carriage return as `\r` and a tab as `\t`.

use std::io::{BufRead, Write};

use super::join::QAPair;
use super::IngestError;

pub fn escape_field(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out
}

pub fn unescape_field(s: &str) -> Result<String, String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('t') => out.push('\t'),
            Some(other) => return Err(format!("unknown escape \\{other}")),
            None => return Err("dangling backslash".into()),
        }
    }
    Ok(out)
}

pub fn write_pair<W: Write>(mut w: W, pair: &QAPair) -> std::io::Result<()> {
    writeln!(
        w,
        "{}\t{}\t{}\t{}\t{}\t{}",
        pair.question_id,
        pair.answer_id,
        escape_field(&pair.title),
        escape_field(&pair.question_text),
        escape_field(&pair.answer_text),
        escape_field(&pair.tags.join("|")),
    )
}

pub fn parse_pair_line(line: &str, line_no: usize) -> Result<QAPair, IngestError> {
    let bad = |message: String| IngestError::Archive { line: line_no, message };
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() != 6 {
        return Err(bad(format!("expected 6 columns, found {}", cols.len())));
    }
    let id = |s: &str| s.parse::<u64>().map_err(|e| bad(format!("bad id {s:?}: {e}")));
    let text = |s: &str| unescape_field(s).map_err(bad);
    let tags = text(cols[5])?;
    Ok(QAPair {
        question_id: id(cols[0])?,
        answer_id: id(cols[1])?,
        title: text(cols[2])?,
        question_text: text(cols[3])?,
        answer_text: text(cols[4])?,
        tags: tags.split('|').filter(|t| !t.is_empty()).map(String::from).collect(),
    })
}

pub fn read_archive<R: BufRead>(r: R) -> Result<Vec<QAPair>, IngestError> {
    let mut pairs = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        pairs.push(parse_pair_line(&line, i + 1)?);
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn record_layout() {
        let pair = QAPair {
            question_id: 3,
            answer_id: 7,
            title: "How to x?".into(),
            question_text: "a\tb\nc".into(),
            answer_text: "String s = \"\\n\";".into(),
            tags: vec!["java".into(), "swing".into()],
        };
        let mut buf = Vec::new();
        write_pair(&mut buf, &pair).unwrap();
        let line = String::from_utf8(buf).unwrap();
        assert_eq!(line, "3\t7\tHow to x?\ta\\tb\\nc\tString s = \"\\\\n\";\tjava|swing\n");
        assert_eq!(parse_pair_line(line.trim_end_matches('\n'), 1).unwrap(), pair);
    }

    #[test]
    fn short_record_is_rejected() {
        assert!(matches!(parse_pair_line("1\t2\tx", 4), Err(IngestError::Archive { line: 4, .. })));
    }

    proptest! {
        #[test]
        fn escape_round_trip(s in "\\PC*|[\\\\\\t\\n\\r a]*") {
            let escaped = escape_field(&s);
            prop_assert!(!escaped.contains('\n') && !escaped.contains('\t'));
            prop_assert_eq!(unescape_field(&escaped).unwrap(), s);
        }
    }
}
