//! Deterministic synthetic Stack Overflow data.
//!
//! Used for fixtures, property tests, the streaming memory test and the
//! benchmarks. Everything is a pure function of the seed.

use std::io::{self, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::DELIMITERS;
use crate::ingest::QAPair;

struct Topic {
    task: &'static str,
    ty: &'static str,
    member: &'static str,
    alt: &'static str,
    code: &'static str,
}

const TOPICS: &[Topic] = &[
    Topic {
        task: "create a window",
        ty: "JFrame",
        member: "setSize",
        alt: "JDialog",
        code: "JFrame frame = new JFrame(\"Demo\");\nframe.setSize(400, 300);\nframe.setVisible(true);",
    },
    Topic {
        task: "open a database connection",
        ty: "DriverManager",
        member: "getConnection",
        alt: "DataSource",
        code: "Connection conn = DriverManager.getConnection(url, user, password);",
    },
    Topic {
        task: "copy an array",
        ty: "System",
        member: "arraycopy",
        alt: "Arrays",
        code: "int[] copy = new int[src.length];\nSystem.arraycopy(src, 0, copy, 0, src.length);",
    },
    Topic {
        task: "open an SSL connection",
        ty: "SSLSocketFactory",
        member: "createSocket",
        alt: "SSLContext",
        code: "SSLSocketFactory f = (SSLSocketFactory) SSLSocketFactory.getDefault();\nSSLSocket s = (SSLSocket) f.createSocket(host, 443);",
    },
    Topic {
        task: "read a text file",
        ty: "Files",
        member: "readAllLines",
        alt: "BufferedReader",
        code: "List<String> lines = Files.readAllLines(Paths.get(\"in.txt\"));",
    },
    Topic {
        task: "sort a list",
        ty: "Collections",
        member: "sort",
        alt: "Comparator",
        code: "Collections.sort(items, (a, b) -> a.compareTo(b));",
    },
    Topic {
        task: "format a date",
        ty: "DateTimeFormatter",
        member: "ofPattern",
        alt: "SimpleDateFormat",
        code: "String s = LocalDate.now().format(DateTimeFormatter.ofPattern(\"yyyy-MM-dd\"));",
    },
    Topic {
        task: "start a thread",
        ty: "Thread",
        member: "start",
        alt: "ExecutorService",
        code: "Thread t = new Thread(() -> work());\nt.start();",
    },
];

const OTHER_TAGS: &[&str] = &["python", "c#", "javascript", "android", "sql"];
const JAVA_EXTRA_TAGS: &[&str] = &["swing", "jdbc", "arrays", "ssl", "io", "collections", "datetime", "multithreading"];

fn howto_title(rng: &mut impl Rng, t: &Topic) -> String {
    match rng.gen_range(0..3) {
        0 => format!("How to {}?", t.task),
        1 => format!("How can I {} in Java?", t.task),
        _ => format!("How do I {} using {}?", t.task, t.ty),
    }
}

// None of these may contain the word "how".
fn other_title(rng: &mut impl Rng, t: &Topic) -> String {
    match rng.gen_range(0..4) {
        0 => format!("Why does {}.{} throw an exception?", t.ty, t.member),
        1 => format!("{} {} returns null", t.ty, t.member),
        2 => format!("What is the difference between {} and {}?", t.ty, t.alt),
        _ => format!("Is {} thread safe?", t.ty),
    }
}

fn question_body(rng: &mut impl Rng, t: &Topic, howto: bool) -> String {
    let lead = if howto {
        format!("<p>I need to {}. Any idea how to do it?</p>", t.task)
    } else {
        format!("<p>I am calling <code>{}</code> and the result is not what I expect.</p>", t.member)
    };
    if rng.gen_bool(0.5) {
        format!("{lead}\n<pre><code>{}</code></pre>\n<p>Thanks &amp; regards.</p>", escape_html(t.code))
    } else {
        lead
    }
}

fn answer_body(rng: &mut impl Rng, t: &Topic) -> String {
    let mut body = format!("<p>Use <code>{}</code>:</p>\n<pre><code>{}</code></pre>", t.ty, escape_html(t.code));
    if rng.gen_bool(0.4) {
        body.push_str(&format!("\n<p>See also <code>{}</code> &lt;docs&gt;.</p>", t.alt));
    }
    body
}

fn escape_html(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn attr(s: &str) -> String {
    quick_xml::escape::escape(s).replace('\n', "&#xA;")
}

/// Shape of a generated dump.
#[derive(Debug, Clone)]
pub struct DumpSpec {
    pub seed: u64,
    /// Question threads to emit; ignored once `max_bytes` is reached.
    pub threads: usize,
    /// Share of threads tagged `java`.
    pub java_share: f64,
    /// Mix in damaged rows and broken answer links.
    pub noise: bool,
    /// Stop after the thread that crosses this many bytes.
    pub max_bytes: Option<u64>,
}

impl DumpSpec {
    /// A clean dump whose threads all join into pairs.
    pub fn clean(seed: u64, threads: usize) -> Self {
        Self { seed, threads, java_share: 1.0, noise: false, max_bytes: None }
    }
}

/// What a generated dump should ingest to.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DumpSummary {
    pub rows: u64,
    pub bytes: u64,
    /// Rows the parser must skip.
    pub malformed_rows: u64,
    /// Pairs a `java` ingest must produce.
    pub expected_pairs: u64,
}

#[derive(Clone, Copy)]
enum Thread {
    Clean,
    NoAccepted,
    Dangling,
    AcceptsQuestion,
    WrongParent,
    EmptyBody,
    MissingType,
    Wiki,
}

struct Emitter<W: Write> {
    out: W,
    summary: DumpSummary,
}

impl<W: Write> Emitter<W> {
    fn row(&mut self, attrs: &[(&str, String)]) -> io::Result<()> {
        let mut line = String::from("  <row");
        for (k, v) in attrs {
            line.push_str(&format!(" {k}=\"{}\"", attr(v)));
        }
        line.push_str(" />\n");
        self.raw(&line)?;
        self.summary.rows += 1;
        Ok(())
    }

    fn raw(&mut self, s: &str) -> io::Result<()> {
        self.out.write_all(s.as_bytes())?;
        self.summary.bytes += s.len() as u64;
        Ok(())
    }
}

/// Writes a `Posts.xml`-style dump to `out`.
pub fn write_dump<W: Write>(spec: &DumpSpec, out: W) -> io::Result<DumpSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut em = Emitter { out, summary: DumpSummary::default() };
    em.raw("<?xml version=\"1.0\" encoding=\"utf-8\"?>\n<posts>\n")?;
    let mut next_id = 1u64;
    let mut thread_no = 0usize;
    loop {
        match spec.max_bytes {
            Some(limit) if em.summary.bytes >= limit => break,
            None if thread_no >= spec.threads => break,
            _ => {}
        }
        thread_no += 1;
        let kind = if spec.noise {
            *[
                Thread::Clean,
                Thread::Clean,
                Thread::Clean,
                Thread::Clean,
                Thread::NoAccepted,
                Thread::Dangling,
                Thread::AcceptsQuestion,
                Thread::WrongParent,
                Thread::EmptyBody,
                Thread::MissingType,
                Thread::Wiki,
            ]
            .choose(&mut rng)
            .unwrap()
        } else {
            Thread::Clean
        };
        let java = rng.gen_bool(spec.java_share);
        emit_thread(&mut em, &mut rng, &mut next_id, kind, java)?;
    }
    em.raw("</posts>\n")?;
    em.out.flush()?;
    Ok(em.summary)
}

fn emit_thread<W: Write>(
    em: &mut Emitter<W>,
    rng: &mut ChaCha8Rng,
    next_id: &mut u64,
    kind: Thread,
    java: bool,
) -> io::Result<()> {
    let topic = TOPICS.choose(rng).unwrap();
    let howto = rng.gen_bool(0.5);
    let qid = *next_id;
    let aid = qid + 1;
    *next_id += 3;

    let mut tags = Vec::new();
    if java {
        tags.push("java");
        tags.push(JAVA_EXTRA_TAGS.choose(rng).unwrap());
    } else {
        tags.push(OTHER_TAGS.choose(rng).unwrap());
    }
    let tags: String = tags.iter().map(|t| format!("<{t}>")).collect();
    let title = if howto { howto_title(rng, topic) } else { other_title(rng, topic) };
    let score = rng.gen_range(-3..200).to_string();

    if let Thread::MissingType = kind {
        em.summary.malformed_rows += 1;
        return em.row(&[("Id", qid.to_string()), ("Title", title), ("Body", "<p>lost</p>".into())]);
    }
    if let Thread::Wiki = kind {
        return em.row(&[("Id", qid.to_string()), ("PostTypeId", "4".into()), ("Body", "<p>Tag wiki.</p>".into())]);
    }

    let accepted = match kind {
        Thread::NoAccepted => None,
        Thread::Dangling => Some(qid + 1_000_000_000),
        Thread::AcceptsQuestion => Some(qid + 2),
        _ => Some(aid),
    };
    let body = match kind {
        Thread::EmptyBody => "<p> </p>".to_string(),
        _ => question_body(rng, topic, howto),
    };
    let mut q = vec![("Id", qid.to_string()), ("PostTypeId", "1".into())];
    if let Some(a) = accepted {
        q.push(("AcceptedAnswerId", a.to_string()));
    }
    q.extend([("Score", score), ("Body", body), ("Title", title), ("Tags", tags)]);
    em.row(&q)?;

    let parent = match kind {
        Thread::WrongParent => qid + 7,
        _ => qid,
    };
    em.row(&[
        ("Id", aid.to_string()),
        ("PostTypeId", "2".into()),
        ("ParentId", parent.to_string()),
        ("Score", rng.gen_range(0..50).to_string()),
        ("Body", answer_body(rng, topic)),
    ])?;
    if let Thread::AcceptsQuestion = kind {
        em.row(&[
            ("Id", (qid + 2).to_string()),
            ("PostTypeId", "1".into()),
            ("Body", "<p>Duplicate.</p>".into()),
            ("Title", "Duplicate".into()),
            ("Tags", "<java>".into()),
        ])?;
    } else if rng.gen_bool(0.3) {
        em.row(&[
            ("Id", (qid + 2).to_string()),
            ("PostTypeId", "2".into()),
            ("ParentId", qid.to_string()),
            ("Body", "<p>Not the accepted one.</p>".into()),
        ])?;
    }
    if java && matches!(kind, Thread::Clean) {
        em.summary.expected_pairs += 1;
    }
    Ok(())
}

const SCRAPS: &[&str] = &[
    "JFrame", "setSize(", "x\ty", "\\", "\\\\", "é", "漢字", "🙂", "```", "\r\n", "  ", "<p>", "&amp;", "[", "]", "<|",
    "|>", "how", "How", "show", "HOW", "null",
];

fn random_text(rng: &mut impl Rng, allow_newlines: bool) -> String {
    let n = rng.gen_range(1..12);
    let mut s = String::new();
    for _ in 0..n {
        match rng.gen_range(0..10) {
            0 => s.push_str(DELIMITERS.choose(rng).unwrap()),
            1..=3 => s.push_str(SCRAPS.choose(rng).unwrap()),
            4 => s.push(rng.gen::<char>()),
            _ => {
                let len = rng.gen_range(1..8);
                s.extend((0..len).map(|_| rng.gen_range(b'a'..=b'z') as char));
                s.push(' ');
            }
        }
    }
    if !allow_newlines {
        s = s.replace(['\n', '\r'], " ");
    }
    if s.trim().is_empty() {
        s.push('x');
    }
    s
}

/// A pair with adversarial payloads: delimiters, backslashes, control and astral chars.
pub fn random_pair(rng: &mut impl Rng, question_id: u64) -> QAPair {
    QAPair {
        question_id,
        answer_id: question_id + 1,
        title: random_text(rng, false),
        question_text: random_text(rng, true),
        answer_text: random_text(rng, true),
        tags: vec!["java".into()],
    }
}

/// `n` plain pairs of which exactly `howto` are phrased as how-to questions.
pub fn pairs_with_intent(seed: u64, n: usize, howto: usize) -> Vec<QAPair> {
    assert!(howto <= n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flags: Vec<bool> = (0..n).map(|i| i < howto).collect();
    flags.shuffle(&mut rng);
    flags
        .into_iter()
        .enumerate()
        .map(|(i, is_howto)| {
            let t = TOPICS.choose(&mut rng).unwrap();
            let title = if is_howto { howto_title(&mut rng, t) } else { other_title(&mut rng, t) };
            let question_text = if is_howto {
                format!("I need to {}.", t.task)
            } else {
                format!("Calling {} gives me the wrong result.", t.member)
            };
            let answer_text = format!("Use {}.{}:\n\n```\n{}\n```", t.ty, t.member, t.code);
            let id = 10 * i as u64 + 1;
            QAPair { question_id: id, answer_id: id + 1, title, question_text, answer_text, tags: vec!["java".into()] }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::classify_intent;
    use crate::corpus::IntentLabel;
    use crate::ingest::{ingest_dump, parse_dump};

    #[test]
    fn same_seed_same_bytes() {
        let spec = DumpSpec { noise: true, java_share: 0.7, ..DumpSpec::clean(3, 40) };
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_dump(&spec, &mut a).unwrap();
        write_dump(&spec, &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn summary_predicts_ingest() {
        let spec = DumpSpec { noise: true, java_share: 0.8, ..DumpSpec::clean(9, 300) };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("Posts.xml");
        let summary = write_dump(&spec, std::fs::File::create(&path).unwrap()).unwrap();
        let report = ingest_dump(&path, "java", io::sink()).unwrap();
        assert_eq!(report.join.pairs, summary.expected_pairs);
        assert_eq!(report.parse.skipped, summary.malformed_rows);
        assert_eq!(report.parse.rows + report.parse.skipped, summary.rows);
        assert!(report.join.dropped() > 0);
    }

    #[test]
    fn byte_cap_stops_shortly_after_limit() {
        let spec = DumpSpec { max_bytes: Some(50_000), ..DumpSpec::clean(1, 0) };
        let mut out = Vec::new();
        let s = write_dump(&spec, &mut out).unwrap();
        assert_eq!(s.bytes, out.len() as u64);
        assert!(s.bytes >= 50_000 && s.bytes < 52_000);
        assert_eq!(parse_dump(out.as_slice()).count() as u64, s.rows);
    }

    #[test]
    fn intent_counts_are_exact() {
        let pairs = pairs_with_intent(5, 50, 30);
        let howto = pairs.iter().filter(|p| classify_intent(p) == IntentLabel::HowTo).count();
        assert_eq!(howto, 30);
    }
}
