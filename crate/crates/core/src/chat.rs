//! Question answering over project evidence.
//!
//! Chat never generates freely. It retrieves the statements behind
//! clustered topics, hands only those to the model, and checks every quote
//! in the answer against the transcript through the cluster trace before
//! the answer is returned.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::gateway::{self, Gateway, GatewayError};
use crate::ids::{AssignmentId, TranscriptId};
use crate::project::{resolve_quote, QuoteAnchor, TraceError};
use crate::state::ProjectState;
use crate::text;

pub const NO_EVIDENCE_ANSWER: &str = "No supporting quotes found.";
pub const DEFAULT_MAX_EVIDENCE: usize = 8;
/// Quotes shorter than this many words are too weak to count as evidence.
pub const MIN_QUOTE_WORDS: usize = 2;

#[derive(Debug, Error, PartialEq)]
pub enum ChatError {
    #[error("question is empty")]
    EmptyQuestion,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("chat response is not a JSON answer object")]
    Parse { raw: String },
    #[error("quote {quote:?} attributed to {assignment_id} is not grounded: {reason}")]
    Ungrounded {
        assignment_id: AssignmentId,
        quote: String,
        reason: String,
    },
}

/// One retrieved statement, keyed by the assignment that links it to a
/// cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub assignment_id: AssignmentId,
    pub transcript_id: TranscriptId,
    pub participant_label: String,
    pub statement_index: usize,
    pub topic: String,
    pub statement: String,
    pub score: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatAnswer {
    pub question: String,
    pub answer: String,
    pub quotes: Vec<QuoteAnchor>,
    /// Evidence items shown to the model.
    pub evidence_considered: usize,
}

impl ChatAnswer {
    fn empty(question: &str, evidence_considered: usize) -> Self {
        Self {
            question: question.to_string(),
            answer: NO_EVIDENCE_ANSWER.to_string(),
            quotes: Vec::new(),
            evidence_considered,
        }
    }
}

const STOPWORDS: &[&str] = &[
    "about",
    "all",
    "and",
    "any",
    "are",
    "did",
    "does",
    "for",
    "from",
    "had",
    "has",
    "have",
    "how",
    "mention",
    "mentioned",
    "mentions",
    "participant",
    "participants",
    "people",
    "said",
    "say",
    "says",
    "talk",
    "talked",
    "tell",
    "that",
    "the",
    "their",
    "them",
    "there",
    "they",
    "this",
    "was",
    "were",
    "what",
    "when",
    "where",
    "which",
    "who",
    "why",
    "with",
    "you",
];

/// Crude suffix stripping so that "pricing", "prices" and "price" meet.
fn stem(word: &str) -> String {
    for suffix in [
        "ations", "ation", "ings", "ing", "ies", "es", "ed", "s", "e", "y",
    ] {
        if let Some(root) = word.strip_suffix(suffix) {
            if root.chars().count() >= 3 {
                return root.to_string();
            }
        }
    }
    word.to_string()
}

pub(crate) fn terms(s: &str) -> BTreeSet<String> {
    text::fold(s)
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| w.chars().count() >= 3 && !STOPWORDS.contains(w))
        .map(stem)
        .collect()
}

/// Ranks clustered assignments by how many question terms their topic,
/// phrase and statement share. One item per statement.
pub fn retrieve(state: &ProjectState, question: &str, k: usize) -> Vec<Evidence> {
    let wanted = terms(question);
    if wanted.is_empty() {
        return Vec::new();
    }
    let mut items = Vec::new();
    let mut seen = HashSet::new();
    for a in state.assignments.values() {
        if a.is_rejected() || state.cluster_of(&a.id).is_none() {
            continue;
        }
        let Some(t) = state.transcripts.get(&a.transcript_id) else {
            continue;
        };
        let Some(turn) = t.turn(a.statement_index) else {
            continue;
        };
        let have = terms(&format!("{} {} {}", a.topic, a.phrase, turn.text));
        let score = wanted.intersection(&have).count();
        if score == 0 {
            continue;
        }
        items.push(Evidence {
            assignment_id: a.id.clone(),
            transcript_id: a.transcript_id.clone(),
            participant_label: t.participant_label.clone(),
            statement_index: a.statement_index,
            topic: a.topic.clone(),
            statement: turn.text.clone(),
            score,
        });
    }
    items.sort_by(|x, y| {
        y.score
            .cmp(&x.score)
            .then_with(|| x.transcript_id.cmp(&y.transcript_id))
            .then_with(|| x.statement_index.cmp(&y.statement_index))
            .then_with(|| x.assignment_id.cmp(&y.assignment_id))
    });
    items.retain(|e| seen.insert((e.transcript_id.clone(), e.statement_index)));
    items.truncate(k);
    items
}

pub fn render_chat_prompt(question: &str, evidence: &[Evidence]) -> String {
    let mut p = String::from(
        "You answer questions about a set of interview transcripts. Use only the EVIDENCE below. \
Support every claim with a quote copied word for word from one evidence item. \
If the evidence does not answer the question, return an empty quotes list.\n\n## QUESTION\n",
    );
    p.push_str(&text::normalize(question));
    p.push_str("\n\n## EVIDENCE\n");
    for e in evidence {
        let _ = writeln!(
            p,
            "[{}] ({}, statement {}): {}",
            e.assignment_id, e.participant_label, e.statement_index, e.statement
        );
    }
    p.push_str(
        "\n## OUTPUT FORMAT\nReturn only a JSON object:\n\
{\"answer\": \"ANSWER\", \"quotes\": [{\"evidence\": \"EVIDENCE ID\", \"quote\": \"EXACT WORDS FROM THAT ITEM\"}]}\n",
    );
    p
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct RawQuote {
    pub evidence: String,
    pub quote: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct RawChat {
    pub answer: String,
    #[serde(default)]
    pub quotes: Vec<RawQuote>,
}

pub fn parse_chat_response(raw: &str) -> Result<RawChat, ChatError> {
    let bad = || ChatError::Parse {
        raw: raw.to_string(),
    };
    let start = raw.find('{').ok_or_else(bad)?;
    let end = raw.rfind('}').ok_or_else(bad)?;
    if end < start {
        return Err(bad());
    }
    let v: Value = serde_json::from_str(&raw[start..=end]).map_err(|_| bad())?;
    serde_json::from_value(v).map_err(|_| bad())
}

/// Accepts the answer only if every quote resolves to transcript text of an
/// evidence item the model was shown.
pub fn verify_answer(
    state: &ProjectState,
    question: &str,
    evidence: &[Evidence],
    raw: RawChat,
) -> Result<ChatAnswer, ChatError> {
    if raw.quotes.is_empty() {
        return Ok(ChatAnswer::empty(question, evidence.len()));
    }
    let shown: HashSet<&str> = evidence.iter().map(|e| e.assignment_id.as_str()).collect();
    let mut quotes = Vec::with_capacity(raw.quotes.len());
    for q in raw.quotes {
        let id = AssignmentId::new(q.evidence.trim());
        let fail = |reason: String| ChatError::Ungrounded {
            assignment_id: id.clone(),
            quote: q.quote.clone(),
            reason,
        };
        if !shown.contains(id.as_str()) {
            return Err(fail("not one of the retrieved evidence items".into()));
        }
        if text::normalize(&q.quote).split(' ').count() < MIN_QUOTE_WORDS {
            return Err(fail(format!(
                "quotes need at least {MIN_QUOTE_WORDS} words"
            )));
        }
        let anchor =
            resolve_quote(state, &id, &q.quote).map_err(|e: TraceError| fail(e.to_string()))?;
        quotes.push(anchor);
    }
    Ok(ChatAnswer {
        question: question.to_string(),
        answer: text::normalize(&raw.answer),
        quotes,
        evidence_considered: evidence.len(),
    })
}

pub fn answer_question(
    state: &ProjectState,
    question: &str,
    gateway: &dyn Gateway,
    max_evidence: usize,
) -> Result<ChatAnswer, ChatError> {
    if text::normalize(question).is_empty() {
        return Err(ChatError::EmptyQuestion);
    }
    let evidence = retrieve(state, question, max_evidence);
    if evidence.is_empty() {
        return Ok(ChatAnswer::empty(question, 0));
    }
    let raw = gateway::complete_prompt(gateway, &render_chat_prompt(question, &evidence))?;
    let parsed = parse_chat_response(&raw)?;
    verify_answer(state, question, &evidence, parsed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stems_meet() {
        assert_eq!(stem("pricing"), stem("price"));
        assert_eq!(stem("prices"), stem("price"));
        assert!(terms("Which participants mentioned pricing?").contains("pric"));
        assert!(terms("which participants said that").is_empty());
    }

    #[test]
    fn parses_fenced_object() {
        let raw = "```json\n{\"answer\": \"P4 did\", \"quotes\": [{\"evidence\": \"a1\", \"quote\": \"too expensive\"}]}\n```";
        let c = parse_chat_response(raw).unwrap();
        assert_eq!(c.quotes.len(), 1);
        assert!(parse_chat_response("nothing").is_err());
    }

    #[test]
    fn empty_project_needs_no_model() {
        let stub = crate::gateway::ScriptedStub::new();
        let a =
            answer_question(&ProjectState::default(), "who mentioned pricing?", &stub, 8).unwrap();
        assert_eq!(a.answer, NO_EVIDENCE_ANSWER);
        assert!(stub.calls().is_empty());
        assert_eq!(
            answer_question(&ProjectState::default(), "  ", &stub, 8),
            Err(ChatError::EmptyQuestion)
        );
    }
}
