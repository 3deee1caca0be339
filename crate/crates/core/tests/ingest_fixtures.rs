use std::path::PathBuf;
use std::time::Instant;

use crowdqa::ingest::{ingest_dump, join_pairs, parse_dump, select_questions, PostType};
use crowdqa::synth::{write_dump, DumpSpec};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

#[test]
fn two_hundred_rows_match_golden_archive() {
    let started = Instant::now();
    let mut out = Vec::new();
    let report = ingest_dump(&fixture("dump-200rows.xml"), "java", &mut out).unwrap();
    let golden = std::fs::read(fixture("pairs-200rows.golden.tsv")).unwrap();
    assert!(out == golden, "archive differs from golden:\n{}", String::from_utf8_lossy(&out));
    assert!(started.elapsed().as_secs_f64() < 5.0);

    assert_eq!(report.parse.rows + report.parse.skipped, 200);
    assert_eq!(report.parse.skipped, 12);
    assert_eq!(report.join.pairs, 27);
    assert!(report.join.dangling > 0 && report.join.not_an_answer > 0);
    assert!(report.join.parent_mismatch > 0 && report.join.empty_text > 0);
    assert_eq!(report.selected_questions, report.join.pairs + report.join.dropped());
}

#[test]
fn clean_fixture_is_reproducible() {
    let mut out = Vec::new();
    let summary = write_dump(&DumpSpec::clean(200, 200), &mut out).unwrap();
    assert_eq!(summary.expected_pairs, 200);
    assert!(out == std::fs::read(fixture("dump-200pairs.xml")).unwrap());
}

// Ten rows worked through by hand: questions 1 and 3 join; 5 dangles
// (no post 99); 6 has a python tag; 8 has no accepted answer.
const TEN_ROWS: &str = r#"<posts>
  <row Id="1" PostTypeId="1" AcceptedAnswerId="2" Title="How to sort?" Body="&lt;p&gt;sort it&lt;/p&gt;" Tags="&lt;java&gt;" />
  <row Id="2" PostTypeId="2" ParentId="1" Body="&lt;p&gt;Collections.sort&lt;/p&gt;" />
  <row Id="3" PostTypeId="1" AcceptedAnswerId="4" Title="Loop?" Body="&lt;p&gt;loop&lt;/p&gt;" Tags="&lt;java&gt;&lt;loops&gt;" />
  <row Id="4" PostTypeId="2" ParentId="3" Body="&lt;p&gt;for&lt;/p&gt;" />
  <row Id="5" PostTypeId="1" AcceptedAnswerId="99" Title="Gone" Body="&lt;p&gt;x&lt;/p&gt;" Tags="&lt;java&gt;" />
  <row Id="6" PostTypeId="1" AcceptedAnswerId="7" Title="Py" Body="&lt;p&gt;x&lt;/p&gt;" Tags="&lt;python&gt;" />
  <row Id="7" PostTypeId="2" ParentId="6" Body="&lt;p&gt;y&lt;/p&gt;" />
  <row Id="8" PostTypeId="1" Title="Open" Body="&lt;p&gt;x&lt;/p&gt;" Tags="&lt;java&gt;" />
  <row Id="9" PostTypeId="2" ParentId="8" Body="&lt;p&gt;z&lt;/p&gt;" />
  <row Id="10" PostTypeId="2" ParentId="3" Body="&lt;p&gt;while&lt;/p&gt;" />
</posts>"#;

#[test]
fn ten_row_join_by_hand() {
    let posts: Vec<_> = parse_dump(TEN_ROWS.as_bytes()).collect::<Result<_, _>>().unwrap();
    assert_eq!(posts.len(), 10);
    let answers: Vec<_> = posts.iter().filter(|p| p.post_type == PostType::Answer).cloned().collect();
    let questions: Vec<_> = select_questions(posts.into_iter(), "java").collect();
    let ids: Vec<u64> = questions.iter().map(|q| q.id).collect();
    assert_eq!(ids, [1, 3, 5]);
    let (pairs, stats) = join_pairs(questions, answers);
    let got: Vec<(u64, u64, &str)> = pairs.iter().map(|p| (p.question_id, p.answer_id, p.answer_text.as_str())).collect();
    assert_eq!(got, [(1, 2, "Collections.sort"), (3, 4, "for")]);
    assert_eq!(stats.dangling, 1);
}
