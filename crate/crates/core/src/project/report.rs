use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::trace::{resolve_quote, trace_backward, Anchor, QuoteAnchor, TraceError};
use super::{live_reviews, Project};
use crate::clustering::{ClusterKind, TopicCluster};
use crate::extraction::TopicAssignment;
use crate::ids::{EventId, ProjectId};
use crate::review::{
    acceptance_summary, rating_distribution, AcceptanceSummary, ClusterReview, RatingDistribution,
    ReviewRecord,
};
use crate::state::{EditKind, Target};
use crate::transcript::ResearchObjective;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Audience {
    ResearcherFull,
    StakeholderSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportOptions {
    pub audience: Audience,
    /// Clusters listed in a stakeholder summary.
    pub top_k: usize,
    pub quotes_per_cluster: usize,
}

impl ReportOptions {
    pub fn new(audience: Audience) -> Self {
        Self {
            audience,
            top_k: 5,
            quotes_per_cluster: 3,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReportError {
    #[error("the project has no completed clustering run")]
    NoClusteringRun,
    #[error(transparent)]
    Trace(#[from] TraceError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullMember {
    pub assignment: TopicAssignment,
    pub anchor: Anchor,
    pub reviews: Vec<ReviewRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullCluster {
    pub cluster: TopicCluster,
    pub members: Vec<FullMember>,
    pub cluster_reviews: Vec<ClusterReview>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditTrailEntry {
    pub id: EventId,
    pub actor_id: String,
    pub kind: EditKind,
    pub target: Target,
    pub at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullReport {
    pub project_id: ProjectId,
    pub project_name: String,
    pub version: u64,
    pub objectives: Vec<ResearchObjective>,
    pub clusters: Vec<FullCluster>,
    pub rejected: Vec<TopicAssignment>,
    pub acceptance: AcceptanceSummary,
    pub ratings: RatingDistribution,
    pub edit_trail: Vec<EditTrailEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryCluster {
    pub id: crate::ids::ClusterId,
    pub name: String,
    pub summary: String,
    pub kind: ClusterKind,
    /// Number of member topics.
    pub frequency: usize,
    /// Participants the members come from.
    pub participants: Vec<String>,
    pub quotes: Vec<QuoteAnchor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub project_id: ProjectId,
    pub project_name: String,
    pub version: u64,
    pub total_clusters: usize,
    pub clusters: Vec<SummaryCluster>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "audience", rename_all = "snake_case")]
pub enum Report {
    ResearcherFull(FullReport),
    StakeholderSummary(SummaryReport),
}

pub fn export_report(p: &Project, opts: &ReportOptions) -> Result<Report, ReportError> {
    if !p.has_clustering_run() {
        return Err(ReportError::NoClusteringRun);
    }
    Ok(match opts.audience {
        Audience::ResearcherFull => Report::ResearcherFull(full_report(p)?),
        Audience::StakeholderSummary => Report::StakeholderSummary(summary_report(p, opts)?),
    })
}

fn full_report(p: &Project) -> Result<FullReport, ReportError> {
    let s = &p.state;
    let mut clusters = Vec::with_capacity(s.clusters.len());
    for c in s.clusters.values() {
        let trace = trace_backward(s, &c.id)?;
        let members = trace
            .members
            .into_iter()
            .map(|m| FullMember {
                assignment: s.assignments[&m.assignment_id].clone(),
                reviews: s
                    .reviews
                    .values()
                    .filter(|r| r.assignment_id == m.assignment_id)
                    .cloned()
                    .collect(),
                anchor: m.anchor,
            })
            .collect();
        clusters.push(FullCluster {
            cluster: c.clone(),
            members,
            cluster_reviews: s
                .cluster_reviews
                .values()
                .filter(|r| r.cluster_id == c.id)
                .cloned()
                .collect(),
        });
    }
    Ok(FullReport {
        project_id: p.meta.id.clone(),
        project_name: p.meta.name.clone(),
        version: p.meta.version,
        objectives: s.objectives.clone(),
        clusters,
        rejected: s
            .assignments
            .values()
            .filter(|a| a.is_rejected())
            .cloned()
            .collect(),
        acceptance: acceptance_summary(live_reviews(s)),
        ratings: rating_distribution(live_reviews(s), s.cluster_reviews.values()),
        edit_trail: p
            .edit_log
            .iter()
            .map(|e| EditTrailEntry {
                id: e.id.clone(),
                actor_id: e.actor_id.clone(),
                kind: e.kind,
                target: e.target.clone(),
                at: e.at,
            })
            .collect(),
    })
}

/// Clusters ranked by member count (ties by id), each with up to
/// `quotes_per_cluster` quotes. Grounded phrases are quoted as they appear
/// in the statement; members whose phrase is not verbatim are quoted with
/// the whole statement so the link back to the source is never cut.
fn summary_report(p: &Project, opts: &ReportOptions) -> Result<SummaryReport, ReportError> {
    let s = &p.state;
    let mut ranked: Vec<&TopicCluster> = s.clusters.values().collect();
    ranked.sort_by(|a, b| {
        b.member_assignment_ids
            .len()
            .cmp(&a.member_assignment_ids.len())
            .then_with(|| a.id.cmp(&b.id))
    });
    let mut clusters = Vec::new();
    for c in ranked.into_iter().take(opts.top_k) {
        let trace = trace_backward(s, &c.id)?;
        let participants: BTreeSet<String> = trace
            .members
            .iter()
            .map(|m| m.anchor.participant_label.clone())
            .collect();
        let mut members = trace.members;
        members.sort_by_key(|m| {
            (
                !m.anchor.grounded,
                m.anchor.transcript_id.clone(),
                m.anchor.statement_index,
            )
        });
        let mut quotes = Vec::new();
        for m in members.into_iter().take(opts.quotes_per_cluster) {
            let text = match (m.anchor.grounded, m.anchor.span) {
                (true, Some(_)) => m.anchor.phrase.clone(),
                _ => s.transcripts[&m.anchor.transcript_id].turns[m.anchor.statement_index]
                    .text
                    .clone(),
            };
            quotes.push(resolve_quote(s, &m.assignment_id, &text)?);
        }
        clusters.push(SummaryCluster {
            id: c.id.clone(),
            name: c.name.clone(),
            summary: c.summary.clone(),
            kind: c.kind,
            frequency: c.member_assignment_ids.len(),
            participants: participants.into_iter().collect(),
            quotes,
        });
    }
    Ok(SummaryReport {
        project_id: p.meta.id.clone(),
        project_name: p.meta.name.clone(),
        version: p.meta.version,
        total_clusters: s.clusters.len(),
        clusters,
    })
}

fn anchor_label(participant: &str, statement_index: usize) -> String {
    format!("{participant} #{statement_index}")
}

pub fn render_markdown(r: &Report) -> String {
    let mut out = String::new();
    match r {
        Report::StakeholderSummary(s) => {
            let _ = writeln!(out, "# {}: key themes\n", s.project_name);
            let _ = writeln!(
                out,
                "Top {} of {} clusters by frequency.\n",
                s.clusters.len(),
                s.total_clusters
            );
            for c in &s.clusters {
                let _ = writeln!(out, "## {} ({} topics)\n", c.name, c.frequency);
                if !c.summary.is_empty() {
                    let _ = writeln!(out, "{}\n", c.summary);
                }
                let _ = writeln!(out, "Participants: {}\n", c.participants.join(", "));
                for q in &c.quotes {
                    let _ = writeln!(
                        out,
                        "> \"{}\" [{}, chars {}..{}]\n",
                        q.text,
                        anchor_label(&q.participant_label, q.statement_index),
                        q.span.start,
                        q.span.end
                    );
                }
            }
        }
        Report::ResearcherFull(f) => {
            let _ = writeln!(
                out,
                "# {}: full analysis (version {})\n",
                f.project_name, f.version
            );
            if !f.objectives.is_empty() {
                let _ = writeln!(out, "## Research objectives\n");
                for o in &f.objectives {
                    let _ = writeln!(out, "- {}: {}", o.id, o.text);
                }
                out.push('\n');
            }
            let _ = writeln!(out, "## Clusters\n");
            for c in &f.clusters {
                let stale = if c.cluster.stale_name {
                    " (name stale)"
                } else {
                    ""
                };
                let _ = writeln!(out, "### {} `{}`{}\n", c.cluster.name, c.cluster.id, stale);
                if !c.cluster.summary.is_empty() {
                    let _ = writeln!(out, "{}\n", c.cluster.summary);
                }
                for m in &c.members {
                    let a = &m.assignment;
                    let _ = writeln!(
                        out,
                        "- **{}** ({}, {:?}) \"{}\" [{}{}]",
                        a.topic,
                        a.research_objective_id,
                        a.status,
                        a.phrase,
                        anchor_label(&m.anchor.participant_label, m.anchor.statement_index),
                        if m.anchor.grounded {
                            ""
                        } else {
                            ", paraphrased"
                        }
                    );
                    for r in &m.reviews {
                        let _ = writeln!(
                            out,
                            "  - {}: Q1 {} Q2 {} Q3 {}, accept {}",
                            r.reviewer_id,
                            r.q1_topic_match,
                            r.q2_ro_match,
                            r.q3_topic_tcn_match,
                            if r.accept_ai { "yes" } else { "no" }
                        );
                    }
                }
                for r in &c.cluster_reviews {
                    let _ = writeln!(
                        out,
                        "- cluster review by {}: Q4 {} Q5 {}",
                        r.reviewer_id, r.q4_tcn_representative, r.q5_tcs_representative
                    );
                }
                out.push('\n');
            }
            if !f.rejected.is_empty() {
                let _ = writeln!(out, "## Rejected topics\n");
                for a in &f.rejected {
                    let _ = writeln!(out, "- {} `{}`", a.topic, a.id);
                }
                out.push('\n');
            }
            let acc = &f.acceptance;
            let _ = writeln!(out, "## Acceptance ({} reviews)\n", acc.records);
            let _ = writeln!(out, "| item | raw yes | adjusted yes |\n|---|---|---|");
            for (label, c) in [
                ("Topic", acc.q1_topic),
                ("RO", acc.q2_ro),
                ("TCN", acc.q3_tcn),
            ] {
                let _ = writeln!(out, "| {label} | {} | {} |", c.raw, c.adjusted);
            }
            let _ = writeln!(out, "\n## Edit history ({} events)\n", f.edit_trail.len());
            for e in &f.edit_trail {
                let _ = writeln!(out, "- {} {:?} by {} at {}", e.id, e.kind, e.actor_id, e.at);
            }
        }
    }
    out
}
