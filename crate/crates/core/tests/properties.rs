use std::collections::HashMap;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crowdqa::corpus::{build_corpora, format_document, parse_document, scan_corpus, split_documents};
use crowdqa::ingest::{ingest_dump, normalize_body, parse_dump, read_archive, PostType};
use crowdqa::synth::{random_pair, write_dump, DumpSpec};
use crowdqa::tokenizer::train_bpe;

// Markup whose decoded prose contains no `<`, `&` or fence lines, so a
// second pass sees plain text.
const FRAGMENTS: &[&str] = &[
    "word", "JFrame", " ", "\n", "\n\n\n\n", "  \t", "<p>", "</p>", "<br>", "<ul><li>", "</li></ul>", "<em>", "</em>",
    "<code>x = 1;</code>", "<pre><code>if (a &lt; b)\n  go();\n\n\n\n</code></pre>", "<pre>raw\t</pre>", "&quot;",
    "&amp; ", "<!-- c -->", "é漢",
];

fn html_strategy() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(FRAGMENTS), 0..30).prop_map(|v| v.concat())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalize_is_idempotent(html in html_strategy()) {
        let once = normalize_body(&html);
        prop_assert_eq!(normalize_body(&once), once);
    }

    #[test]
    fn joined_pairs_keep_their_invariants(seed in any::<u64>(), share in 0.0f64..1.0) {
        let spec = DumpSpec { noise: true, java_share: share, ..DumpSpec::clean(seed, 40) };
        let mut xml = Vec::new();
        let summary = write_dump(&spec, &mut xml).unwrap();
        let posts: Vec<_> = parse_dump(xml.as_slice()).collect::<Result<_, _>>().unwrap();
        let by_id: HashMap<u64, _> = posts.iter().map(|p| (p.id, p)).collect();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("Posts.xml");
        std::fs::write(&path, &xml).unwrap();
        let mut archive = Vec::new();
        let report = ingest_dump(&path, "java", &mut archive).unwrap();
        let pairs = read_archive(archive.as_slice()).unwrap();

        prop_assert_eq!(pairs.len() as u64, summary.expected_pairs);
        prop_assert_eq!(report.join.pairs, summary.expected_pairs);
        for p in &pairs {
            let q = by_id[&p.question_id];
            let a = by_id[&p.answer_id];
            prop_assert!(p.tags.iter().any(|t| t == "java"));
            prop_assert_eq!(q.accepted_answer_id, Some(p.answer_id));
            prop_assert_eq!(a.post_type, PostType::Answer);
            prop_assert_eq!(a.parent_id, Some(p.question_id));
            prop_assert!(!p.question_text.is_empty() && !p.answer_text.is_empty());
        }
    }

    #[test]
    fn documents_survive_format_and_parse(seed in any::<u64>(), n in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs: Vec<_> = (0..n).map(|i| random_pair(&mut rng, i as u64 * 2 + 1)).collect();
        let corpora = build_corpora(&pairs).unwrap();
        prop_assert_eq!(corpora.stats.howto_pairs + corpora.stats.nonhowto_pairs, n as u64);
        let docs = scan_corpus(&corpora.howto).unwrap() + scan_corpus(&corpora.nonhowto).unwrap();
        prop_assert_eq!(docs, n);
        for pair in &pairs {
            let doc = format_document(pair).unwrap();
            prop_assert_eq!(split_documents(&doc.text).unwrap().len(), 1);
            let back = parse_document(&doc.text).unwrap();
            prop_assert_eq!(&back.title, &pair.title);
            prop_assert_eq!(&back.question_text, &pair.question_text);
            prop_assert_eq!(&back.answer_text, &pair.answer_text);
        }
    }

    #[test]
    fn tokenizer_round_trips_any_text(text in any::<String>(), train in "[a-z <|>\\[\\]]{8,200}") {
        let vocab = train_bpe(&train, 320).unwrap();
        let ids = vocab.encode(&text);
        prop_assert_eq!(vocab.decode(&ids).unwrap(), text);
    }
}
