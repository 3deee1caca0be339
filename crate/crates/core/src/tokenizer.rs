//! Byte-level BPE with the four document delimiters as atomic tokens.
//!
//! Ids `0..256` are raw bytes, the delimiters follow, and merged tokens take
//! the ids after that in merge order. A delimiter preceded by a backslash is
//! escaped payload text and is encoded as ordinary bytes.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::corpus::{find_delimiters, DELIMITERS, END_OF_TEXT};

pub type TokenId = u32;

const BYTE_TOKENS: usize = 256;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TokenizerError {
    #[error("cannot train on an empty corpus")]
    EmptyCorpus,
    #[error("target vocabulary size {target} is below the minimum of {min}")]
    TargetTooSmall { target: usize, min: usize },
    #[error("unknown token id {0}")]
    UnknownId(TokenId),
    #[error("vocab line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    /// Byte sequence of every id.
    tokens: Vec<Vec<u8>>,
    /// Merge rules in application order; rule `r` creates id `first_merge_id() + r`.
    merges: Vec<(TokenId, TokenId)>,
    ranks: HashMap<(TokenId, TokenId), u32>,
}

/// Smallest vocabulary: every byte plus the delimiters.
pub const MIN_VOCAB_SIZE: usize = BYTE_TOKENS + DELIMITERS.len();

impl Vocab {
    /// Bytes and delimiters only.
    pub fn base() -> Self {
        let mut tokens: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        tokens.extend(DELIMITERS.iter().map(|d| d.as_bytes().to_vec()));
        Vocab { tokens, merges: Vec::new(), ranks: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn merges(&self) -> &[(TokenId, TokenId)] {
        &self.merges
    }

    pub fn token_bytes(&self, id: TokenId) -> Option<&[u8]> {
        self.tokens.get(id as usize).map(Vec::as_slice)
    }

    fn first_merge_id() -> TokenId {
        MIN_VOCAB_SIZE as TokenId
    }

    pub fn special_id(delimiter: &str) -> Option<TokenId> {
        DELIMITERS
            .iter()
            .position(|d| *d == delimiter)
            .map(|i| (BYTE_TOKENS + i) as TokenId)
    }

    pub fn end_of_text_id(&self) -> TokenId {
        Self::special_id(END_OF_TEXT).unwrap()
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        (BYTE_TOKENS as TokenId..MIN_VOCAB_SIZE as TokenId).contains(&id)
    }

    fn push_merge(&mut self, left: TokenId, right: TokenId) -> TokenId {
        let id = self.tokens.len() as TokenId;
        let mut bytes = self.tokens[left as usize].clone();
        bytes.extend_from_slice(&self.tokens[right as usize]);
        self.tokens.push(bytes);
        self.ranks.insert((left, right), self.merges.len() as u32);
        self.merges.push((left, right));
        id
    }

    /// Encodes text; delimiters map to their reserved ids.
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        let mut ids = Vec::with_capacity(text.len() / 2);
        let mut pos = 0;
        for hit in find_delimiters(text) {
            self.encode_bytes_into(&text.as_bytes()[pos..hit.offset], &mut ids);
            ids.push(Self::special_id(hit.delimiter).unwrap());
            pos = hit.offset + hit.delimiter.len();
        }
        self.encode_bytes_into(&text.as_bytes()[pos..], &mut ids);
        ids
    }

    /// BPE over a span that holds no delimiters.
    fn encode_bytes_into(&self, span: &[u8], out: &mut Vec<TokenId>) {
        let mut seq: Vec<TokenId> = span.iter().map(|&b| b as TokenId).collect();
        while seq.len() >= 2 {
            let best = seq
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0], w[1])).map(|&r| (r, (w[0], w[1]))))
                .min_by_key(|&(r, _)| r);
            let Some((rank, pair)) = best else { break };
            let new_id = Self::first_merge_id() + rank;
            seq = merge_pair(&seq, pair, new_id);
        }
        out.extend_from_slice(&seq);
    }

    /// Lossless byte decode.
    pub fn decode_bytes(&self, ids: &[TokenId]) -> Result<Vec<u8>, TokenizerError> {
        let mut out = Vec::with_capacity(ids.len() * 3);
        for &id in ids {
            out.extend_from_slice(self.token_bytes(id).ok_or(TokenizerError::UnknownId(id))?);
        }
        Ok(out)
    }

    /// Decode for display; invalid UTF-8 (a truncated sample) becomes U+FFFD.
    pub fn decode(&self, ids: &[TokenId]) -> Result<String, TokenizerError> {
        Ok(String::from_utf8_lossy(&self.decode_bytes(ids)?).into_owned())
    }

    /// Text form: `bpe-v1 <size>`, then `S` lines for delimiters and `M` lines for merges.
    pub fn serialize(&self) -> String {
        let mut out = format!("bpe-v1 {}\n", self.len());
        for d in DELIMITERS {
            let _ = writeln!(out, "S {} {}", Self::special_id(d).unwrap(), d);
        }
        for (rank, (l, r)) in self.merges.iter().enumerate() {
            let _ = writeln!(out, "M {} {} {}", l, r, Self::first_merge_id() + rank as TokenId);
        }
        out
    }

    pub fn deserialize(text: &str) -> Result<Self, TokenizerError> {
        let err = |line: usize, message: String| TokenizerError::Parse { line, message };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
        let size: usize = header
            .strip_prefix("bpe-v1 ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| err(1, format!("bad header {header:?}")))?;

        let mut vocab = Vocab::base();
        let mut specials = HashSet::new();
        for (i, line) in lines {
            let line_no = i + 1;
            if line.is_empty() {
                continue;
            }
            let mut parts = line.splitn(4, ' ');
            let kind = parts.next().unwrap_or("");
            let num = |s: Option<&str>| -> Result<TokenId, TokenizerError> {
                s.and_then(|s| s.parse().ok())
                    .ok_or_else(|| err(line_no, format!("bad number in {line:?}")))
            };
            match kind {
                "S" => {
                    let mut parts = line.splitn(3, ' ').skip(1);
                    let id = num(parts.next())?;
                    let token = parts.next().unwrap_or("");
                    if Self::special_id(token) != Some(id) {
                        return Err(err(line_no, format!("special {token:?} must have its reserved id, got {id}")));
                    }
                    specials.insert(id);
                }
                "M" => {
                    let (l, r, new) = (num(parts.next())?, num(parts.next())?, num(parts.next())?);
                    let next = vocab.len() as TokenId;
                    if new != next {
                        return Err(err(line_no, format!("merge creates id {new}, expected {next}")));
                    }
                    if l >= next || r >= next {
                        return Err(err(line_no, format!("merge refers to unknown id in {line:?}")));
                    }
                    if vocab.is_special(l) || vocab.is_special(r) {
                        return Err(err(line_no, "merge uses a special token".into()));
                    }
                    vocab.push_merge(l, r);
                }
                other => return Err(err(line_no, format!("unknown record kind {other:?}"))),
            }
        }
        if specials.len() != DELIMITERS.len() {
            return Err(err(1, "missing special token lines".into()));
        }
        if vocab.len() != size {
            return Err(err(1, format!("header says {size} tokens, file defines {}", vocab.len())));
        }
        Ok(vocab)
    }

    /// 64-bit fingerprint of the serialized form.
    pub fn fingerprint(&self) -> u64 {
        let digest = Sha256::digest(self.serialize().as_bytes());
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }
}

/// Replaces non-overlapping occurrences of `pair`, scanning left to right.
fn merge_pair(seq: &[TokenId], pair: (TokenId, TokenId), new_id: TokenId) -> Vec<TokenId> {
    let mut out = Vec::with_capacity(seq.len());
    let mut i = 0;
    while i < seq.len() {
        if i + 1 < seq.len() && (seq[i], seq[i + 1]) == pair {
            out.push(new_id);
            i += 2;
        } else {
            out.push(seq[i]);
            i += 1;
        }
    }
    out
}

/// Splits text at delimiters; the pieces between them are what BPE sees.
fn byte_spans(text: &str) -> Vec<&[u8]> {
    let mut spans = Vec::new();
    let mut pos = 0;
    for hit in find_delimiters(text) {
        spans.push(&text.as_bytes()[pos..hit.offset]);
        pos = hit.offset + hit.delimiter.len();
    }
    spans.push(&text.as_bytes()[pos..]);
    spans.retain(|s| s.len() >= 2);
    spans
}

type Pair = (TokenId, TokenId);

struct Trainer {
    /// Distinct spans with their multiplicity.
    spans: Vec<(Vec<TokenId>, i64)>,
    counts: HashMap<Pair, i64>,
    /// Spans that may contain a pair; entries can be stale.
    locations: HashMap<Pair, HashSet<usize>>,
}

impl Trainer {
    fn new(texts: &[&str]) -> Self {
        let mut distinct: HashMap<&[u8], i64> = HashMap::new();
        let mut order = Vec::new();
        for text in texts {
            for span in byte_spans(text) {
                let count = distinct.entry(span).or_insert(0);
                if *count == 0 {
                    order.push(span);
                }
                *count += 1;
            }
        }
        let mut trainer = Trainer { spans: Vec::new(), counts: HashMap::new(), locations: HashMap::new() };
        for span in order {
            let ids = span.iter().map(|&b| b as TokenId).collect();
            trainer.spans.push((ids, distinct[span]));
            trainer.add_span_pairs(trainer.spans.len() - 1, 1);
        }
        trainer
    }

    fn add_span_pairs(&mut self, index: usize, sign: i64) {
        let (ids, weight) = &self.spans[index];
        for w in ids.windows(2) {
            let pair = (w[0], w[1]);
            *self.counts.entry(pair).or_insert(0) += sign * weight;
            if sign > 0 {
                self.locations.entry(pair).or_default().insert(index);
            }
        }
    }

    /// Most frequent pair, ties to the byte-wise smaller left then right token.
    fn best_pair(&self, vocab: &Vocab) -> Option<(Pair, i64)> {
        let mut best: Option<(Pair, i64)> = None;
        for (&pair, &count) in &self.counts {
            if count < 2 {
                continue;
            }
            let better = match best {
                None => true,
                Some((bp, bc)) => {
                    count > bc
                        || (count == bc
                            && (&vocab.tokens[pair.0 as usize], &vocab.tokens[pair.1 as usize])
                                < (&vocab.tokens[bp.0 as usize], &vocab.tokens[bp.1 as usize]))
                }
            };
            if better {
                best = Some((pair, count));
            }
        }
        best
    }

    fn apply(&mut self, pair: Pair, new_id: TokenId) {
        let Some(locations) = self.locations.remove(&pair) else { return };
        let mut locations: Vec<usize> = locations.into_iter().collect();
        locations.sort_unstable();
        for index in locations {
            let contains = self.spans[index].0.windows(2).any(|w| (w[0], w[1]) == pair);
            if !contains {
                continue;
            }
            self.add_span_pairs(index, -1);
            self.spans[index].0 = merge_pair(&self.spans[index].0, pair, new_id);
            self.add_span_pairs(index, 1);
        }
        self.counts.retain(|_, c| *c > 0);
    }
}

/// Trains merges on one corpus text.
pub fn train_bpe(corpus: &str, target_vocab_size: usize) -> Result<Vocab, TokenizerError> {
    train_bpe_multi(&[corpus], target_vocab_size)
}

/// Trains merges over several corpus texts; spans never cross text boundaries.
///
/// Greedy: merge the most frequent adjacent pair until the target size is
/// reached or no pair occurs at least twice.
pub fn train_bpe_multi(corpora: &[&str], target_vocab_size: usize) -> Result<Vocab, TokenizerError> {
    if corpora.iter().all(|c| c.is_empty()) {
        return Err(TokenizerError::EmptyCorpus);
    }
    if target_vocab_size < MIN_VOCAB_SIZE {
        return Err(TokenizerError::TargetTooSmall { target: target_vocab_size, min: MIN_VOCAB_SIZE });
    }
    let mut vocab = Vocab::base();
    let mut trainer = Trainer::new(corpora);
    while vocab.len() < target_vocab_size {
        let Some((pair, _)) = trainer.best_pair(&vocab) else { break };
        let new_id = vocab.push_merge(pair.0, pair.1);
        trainer.apply(pair, new_id);
    }
    Ok(vocab)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn only_candidate_is_merged_first() {
        let v = train_bpe("aaaa", MIN_VOCAB_SIZE + 1).unwrap();
        assert_eq!(v.merges(), &[(b'a' as u32, b'a' as u32)]);
    }

    #[test]
    fn specials_only_corpus_has_no_merges() {
        let v = train_bpe("<|startoftext|>\n[QUESTION][ANSWER]<|endoftext|>", 1000).unwrap();
        assert_eq!(v.len(), MIN_VOCAB_SIZE);
        assert!(v.merges().is_empty());
    }

    #[test]
    fn training_errors() {
        assert_eq!(train_bpe("", 300), Err(TokenizerError::EmptyCorpus));
        assert_eq!(
            train_bpe("abc", 100),
            Err(TokenizerError::TargetTooSmall { target: 100, min: MIN_VOCAB_SIZE })
        );
    }

    #[test]
    fn special_tokens_are_atomic() {
        let v = Vocab::base();
        let eot = v.end_of_text_id();
        assert_eq!(v.encode("<|endoftext|>"), vec![eot]);
        assert_eq!(v.decode(&[eot]).unwrap(), "<|endoftext|>");
        assert!(v.encode("").is_empty());
    }

    #[test]
    fn escaped_delimiter_is_plain_text() {
        let v = Vocab::base();
        let ids = v.encode("\\<|endoftext|>");
        assert_eq!(ids.len(), 1 + "<|endoftext|>".len());
        assert!(!ids.contains(&v.end_of_text_id()));
    }

    #[test]
    fn code_line_round_trip() {
        let s = "mainFrame.setLayout(new BorderLayout());";
        let v = train_bpe(&s.repeat(4), 400).unwrap();
        let ids = v.encode(s);
        assert!(ids.len() < s.len());
        assert_eq!(v.decode(&ids).unwrap(), s);
    }

    #[test]
    fn unknown_id_is_named() {
        let v = Vocab::base();
        let bad = v.len() as u32 + 1;
        assert_eq!(v.decode(&[bad]), Err(TokenizerError::UnknownId(bad)));
    }

    #[test]
    fn lossy_decode_of_truncated_utf8() {
        let v = Vocab::base();
        let ids = v.encode("é");
        assert_eq!(v.decode(&ids[..1]).unwrap(), "\u{FFFD}");
        assert_eq!(v.decode_bytes(&ids[..1]).unwrap(), vec![0xC3]);
    }

    #[test]
    fn serialization_round_trip() {
        let v = train_bpe("the theme of the thesis", 280).unwrap();
        let text = v.serialize();
        assert!(text.starts_with(&format!("bpe-v1 {}\nS 256 <|startoftext|>\n", v.len())));
        let back = Vocab::deserialize(&text).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.fingerprint(), v.fingerprint());
    }

    #[test]
    fn deserialize_rejects_bad_files() {
        assert!(Vocab::deserialize("").is_err());
        assert!(Vocab::deserialize("bpe-v1 261\nS 256 <|startoftext|>\n").is_err());
        let mut text = Vocab::base().serialize();
        text = text.replace("bpe-v1 260", "bpe-v1 261");
        text.push_str("M 97 999 260\n");
        assert!(matches!(Vocab::deserialize(&text), Err(TokenizerError::Parse { .. })));
    }
}
