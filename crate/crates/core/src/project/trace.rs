use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::TopicCluster;
use crate::extraction::TopicAssignment;
use crate::ids::{AssignmentId, ClusterId, TranscriptId};
use crate::review::{ClusterReview, ReviewRecord};
use crate::state::ProjectState;
use crate::text::{self, CharSpan};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceError {
    #[error("unknown transcript {0}")]
    UnknownTranscript(TranscriptId),
    #[error("turn {index} of transcript {transcript} is not an interviewee statement")]
    NotAStatement {
        transcript: TranscriptId,
        index: usize,
    },
    #[error("unknown cluster {0}")]
    UnknownCluster(ClusterId),
    #[error("unknown assignment {0}")]
    UnknownAssignment(AssignmentId),
    #[error("assignment {0} is not in any cluster")]
    Unclustered(AssignmentId),
    #[error("quote not found in statement {statement_index} of {transcript}: {quote:?}")]
    QuoteNotFound {
        transcript: TranscriptId,
        statement_index: usize,
        quote: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StatementRef {
    pub transcript_id: TranscriptId,
    pub statement_index: usize,
}

/// Where an assignment's evidence sits in the transcript.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anchor {
    pub transcript_id: TranscriptId,
    pub participant_label: String,
    pub statement_index: usize,
    /// Character span of the supporting phrase; absent when the phrase is
    /// not verbatim from the statement.
    pub span: Option<CharSpan>,
    pub phrase: String,
    pub grounded: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterLink {
    pub id: ClusterId,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardLink {
    pub assignment: TopicAssignment,
    /// Absent for rejected assignments and before the first clustering run.
    pub cluster: Option<ClusterLink>,
    pub reviews: Vec<ReviewRecord>,
    pub cluster_reviews: Vec<ClusterReview>,
}

/// A statement and everything derived from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardTrace {
    pub statement: StatementRef,
    pub participant_label: String,
    pub text: String,
    pub assignments: Vec<ForwardLink>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemberTrace {
    pub assignment_id: AssignmentId,
    pub topic: String,
    pub research_objective_id: String,
    pub anchor: Anchor,
}

/// A cluster and the evidence behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackwardTrace {
    pub cluster: TopicCluster,
    pub members: Vec<MemberTrace>,
}

/// A verified quote: the exact statement text it covers and its position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuoteAnchor {
    pub assignment_id: AssignmentId,
    pub cluster_id: ClusterId,
    pub transcript_id: TranscriptId,
    pub participant_label: String,
    pub statement_index: usize,
    pub span: CharSpan,
    pub text: String,
}

fn statement_text<'a>(
    state: &'a ProjectState,
    s: &StatementRef,
) -> Result<(&'a str, &'a str), TraceError> {
    let t = state
        .transcripts
        .get(&s.transcript_id)
        .ok_or_else(|| TraceError::UnknownTranscript(s.transcript_id.clone()))?;
    if !t.is_statement(s.statement_index) {
        return Err(TraceError::NotAStatement {
            transcript: s.transcript_id.clone(),
            index: s.statement_index,
        });
    }
    Ok((&t.participant_label, &t.turns[s.statement_index].text))
}

/// Evidence anchor of one assignment.
pub fn trace_assignment(state: &ProjectState, id: &AssignmentId) -> Result<Anchor, TraceError> {
    let a = state
        .assignments
        .get(id)
        .ok_or_else(|| TraceError::UnknownAssignment(id.clone()))?;
    let sref = StatementRef {
        transcript_id: a.transcript_id.clone(),
        statement_index: a.statement_index,
    };
    let (participant, _) = statement_text(state, &sref)?;
    Ok(Anchor {
        transcript_id: a.transcript_id.clone(),
        participant_label: participant.to_string(),
        statement_index: a.statement_index,
        span: a.phrase_span,
        phrase: a.phrase.clone(),
        grounded: a.phrase_grounded,
    })
}

/// Statement → assignments → clusters → reviews. A statement without
/// assignments yields an empty chain.
pub fn trace_forward(state: &ProjectState, s: &StatementRef) -> Result<ForwardTrace, TraceError> {
    let (participant, text) = statement_text(state, s)?;
    let assignments = state
        .assignments
        .values()
        .filter(|a| a.transcript_id == s.transcript_id && a.statement_index == s.statement_index)
        .map(|a| {
            let cluster = state.cluster_of(&a.id);
            ForwardLink {
                assignment: a.clone(),
                cluster: cluster.map(|c| ClusterLink {
                    id: c.id.clone(),
                    name: c.name.clone(),
                }),
                reviews: state
                    .reviews
                    .values()
                    .filter(|r| r.assignment_id == a.id)
                    .cloned()
                    .collect(),
                cluster_reviews: cluster
                    .map(|c| {
                        state
                            .cluster_reviews
                            .values()
                            .filter(|r| r.cluster_id == c.id)
                            .cloned()
                            .collect()
                    })
                    .unwrap_or_default(),
            }
        })
        .collect();
    Ok(ForwardTrace {
        statement: s.clone(),
        participant_label: participant.to_string(),
        text: text.to_string(),
        assignments,
    })
}

/// Cluster → member assignments → supporting phrases → transcript positions.
pub fn trace_backward(state: &ProjectState, id: &ClusterId) -> Result<BackwardTrace, TraceError> {
    let cluster = state
        .clusters
        .get(id)
        .ok_or_else(|| TraceError::UnknownCluster(id.clone()))?;
    let members = cluster
        .member_assignment_ids
        .iter()
        .map(|m| {
            let a = state
                .assignments
                .get(m)
                .ok_or_else(|| TraceError::UnknownAssignment(m.clone()))?;
            Ok(MemberTrace {
                assignment_id: a.id.clone(),
                topic: a.topic.clone(),
                research_objective_id: a.research_objective_id.clone(),
                anchor: trace_assignment(state, m)?,
            })
        })
        .collect::<Result<_, TraceError>>()?;
    Ok(BackwardTrace {
        cluster: cluster.clone(),
        members,
    })
}

/// Checks a quote attributed to `assignment` against the evidence reachable
/// through [`trace_backward`]: the assignment must sit in a cluster, and the
/// quote must occur verbatim (after whitespace and case normalization) in
/// the anchored statement. Returns the exact statement text it covers.
pub fn resolve_quote(
    state: &ProjectState,
    assignment: &AssignmentId,
    quote: &str,
) -> Result<QuoteAnchor, TraceError> {
    let cluster = state
        .cluster_of(assignment)
        .ok_or_else(|| TraceError::Unclustered(assignment.clone()))?;
    let trace = trace_backward(state, &cluster.id)?;
    let member = trace
        .members
        .into_iter()
        .find(|m| &m.assignment_id == assignment)
        .ok_or_else(|| TraceError::UnknownAssignment(assignment.clone()))?;
    let sref = StatementRef {
        transcript_id: member.anchor.transcript_id.clone(),
        statement_index: member.anchor.statement_index,
    };
    let (_, statement) = statement_text(state, &sref)?;
    let not_found = || TraceError::QuoteNotFound {
        transcript: sref.transcript_id.clone(),
        statement_index: sref.statement_index,
        quote: quote.to_string(),
    };
    let span = text::find_span(statement, quote).ok_or_else(not_found)?;
    let exact = span.slice(statement).ok_or_else(not_found)?;
    Ok(QuoteAnchor {
        assignment_id: assignment.clone(),
        cluster_id: cluster.id.clone(),
        transcript_id: sref.transcript_id,
        participant_label: member.anchor.participant_label,
        statement_index: sref.statement_index,
        span,
        text: exact.to_string(),
    })
}

/// (statement, assignment, cluster) links as seen from every statement.
pub fn forward_links(
    state: &ProjectState,
) -> Result<BTreeSet<(StatementRef, AssignmentId, ClusterId)>, TraceError> {
    let mut out = BTreeSet::new();
    for t in state.transcripts.values() {
        for turn in crate::transcript::interviewee_statements(t) {
            let sref = StatementRef {
                transcript_id: t.id.clone(),
                statement_index: turn.index,
            };
            for link in trace_forward(state, &sref)?.assignments {
                if let Some(c) = link.cluster {
                    out.insert((sref.clone(), link.assignment.id, c.id));
                }
            }
        }
    }
    Ok(out)
}

/// The same links as seen from every cluster.
pub fn backward_links(
    state: &ProjectState,
) -> Result<BTreeSet<(StatementRef, AssignmentId, ClusterId)>, TraceError> {
    let mut out = BTreeSet::new();
    for id in state.clusters.keys() {
        for m in trace_backward(state, id)?.members {
            out.insert((
                StatementRef {
                    transcript_id: m.anchor.transcript_id,
                    statement_index: m.anchor.statement_index,
                },
                m.assignment_id,
                id.clone(),
            ));
        }
    }
    Ok(out)
}
