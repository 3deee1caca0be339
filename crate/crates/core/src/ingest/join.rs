//! Question selection and the accepted-answer join.

use std::collections::{HashMap, HashSet};

use super::dump::{PostType, RawPost};
use super::html::{normalize_body, normalize_title};

/// A question joined to its accepted answer, bodies already normalized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QAPair {
    pub question_id: u64,
    pub answer_id: u64,
    /// Single line; never contains `\n`.
    pub title: String,
    pub question_text: String,
    pub answer_text: String,
    pub tags: Vec<String>,
}

/// Why a selected question produced no pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    /// The accepted answer is absent from the dump slice.
    Dangling,
    /// The accepted id names a post that is not an answer.
    NotAnAnswer,
    /// The answer's parent is a different question.
    ParentMismatch,
    /// Question or answer body is empty after normalization.
    EmptyText,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct JoinStats {
    pub pairs: u64,
    pub dangling: u64,
    pub not_an_answer: u64,
    pub parent_mismatch: u64,
    pub empty_text: u64,
}

impl JoinStats {
    pub fn dropped(&self) -> u64 {
        self.dangling + self.not_an_answer + self.parent_mismatch + self.empty_text
    }

    fn record(&mut self, outcome: &Result<QAPair, DropReason>) {
        match outcome {
            Ok(_) => self.pairs += 1,
            Err(DropReason::Dangling) => self.dangling += 1,
            Err(DropReason::NotAnAnswer) => self.not_an_answer += 1,
            Err(DropReason::ParentMismatch) => self.parent_mismatch += 1,
            Err(DropReason::EmptyText) => self.empty_text += 1,
        }
    }
}

/// Whether a post is a question carrying `required_tag` with an accepted answer.
pub fn is_selected(post: &RawPost, required_tag: &str) -> bool {
    post.post_type == PostType::Question
        && post.accepted_answer_id.is_some()
        && post.tags.iter().any(|t| t == required_tag)
}

/// Keeps tagged questions that have an accepted answer, in input order.
pub fn select_questions<'a, I>(posts: I, required_tag: &'a str) -> impl Iterator<Item = RawPost> + 'a
where
    I: IntoIterator<Item = RawPost>,
    I::IntoIter: 'a,
{
    posts.into_iter().filter(move |p| is_selected(p, required_tag))
}

struct IndexedAnswer {
    parent_id: Option<u64>,
    text: String,
}

/// Index of the answers a known set of questions refers to.
///
/// Built in two steps so a dump can be streamed twice instead of being held
/// in memory: first register the wanted ids, then offer every post.
#[derive(Default)]
pub struct AnswerIndex {
    wanted: HashSet<u64>,
    answers: HashMap<u64, IndexedAnswer>,
    not_answers: HashSet<u64>,
}

impl AnswerIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn want(&mut self, question: &RawPost) {
        if let Some(id) = question.accepted_answer_id {
            self.wanted.insert(id);
        }
    }

    pub fn wanted_len(&self) -> usize {
        self.wanted.len()
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }

    /// Stores `post` if some registered question points at it.
    pub fn offer(&mut self, post: &RawPost) {
        if !self.wanted.contains(&post.id) {
            return;
        }
        if post.post_type == PostType::Answer {
            self.answers.insert(
                post.id,
                IndexedAnswer {
                    parent_id: post.parent_id,
                    text: normalize_body(&post.body_html),
                },
            );
        } else {
            self.not_answers.insert(post.id);
        }
    }

    /// Joins one selected question against the index.
    pub fn join(&self, question: &RawPost) -> Result<QAPair, DropReason> {
        let answer_id = question.accepted_answer_id.ok_or(DropReason::Dangling)?;
        let answer = match self.answers.get(&answer_id) {
            Some(answer) => answer,
            None if self.not_answers.contains(&answer_id) => return Err(DropReason::NotAnAnswer),
            None => return Err(DropReason::Dangling),
        };
        if answer.parent_id != Some(question.id) {
            return Err(DropReason::ParentMismatch);
        }
        let question_text = normalize_body(&question.body_html);
        if question_text.is_empty() || answer.text.is_empty() {
            return Err(DropReason::EmptyText);
        }
        Ok(QAPair {
            question_id: question.id,
            answer_id,
            title: normalize_title(question.title.as_deref().unwrap_or("")),
            question_text,
            answer_text: answer.text.clone(),
            tags: question.tags.clone(),
        })
    }
}

/// Joins already-selected questions to their accepted answers.
///
/// Pairs come out in question order; dropped questions are only counted.
pub fn join_pairs<Q, A>(questions: Q, answers: A) -> (Vec<QAPair>, JoinStats)
where
    Q: IntoIterator<Item = RawPost>,
    A: IntoIterator<Item = RawPost>,
{
    let questions: Vec<RawPost> = questions.into_iter().collect();
    let mut index = AnswerIndex::new();
    for q in &questions {
        index.want(q);
    }
    for post in answers {
        index.offer(&post);
    }
    let mut stats = JoinStats::default();
    let mut pairs = Vec::new();
    for q in &questions {
        let outcome = index.join(q);
        stats.record(&outcome);
        if let Ok(pair) = outcome {
            pairs.push(pair);
        }
    }
    (pairs, stats)
}

/// Applies [`AnswerIndex::join`] and updates `stats`.
pub(crate) fn join_one(index: &AnswerIndex, q: &RawPost, stats: &mut JoinStats) -> Option<QAPair> {
    let outcome = index.join(q);
    stats.record(&outcome);
    outcome.ok()
}
