//! Embedding, density clustering and naming of extracted topics.
//!
//! Noise points are never absorbed into a neighbouring cluster. Each one
//! becomes an outlier singleton so reviewers see it as its own entity.

mod embed;
mod hdbscan;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extraction::{Provenance, TopicAssignment};
use crate::gateway::{self, map_bounded, Gateway, GatewayError};
use crate::ids::{AssignmentId, ClusterId};
use crate::text;

pub use embed::{
    embed_topics, EmbeddingError, EmbeddingProvider, EmbeddingVector, HttpEmbedder,
    NgramHashEmbedder, NGRAM_DIMENSION, NGRAM_PROVIDER_ID,
};
pub use hdbscan::{
    hdbscan, hdbscan_points, hdbscan_with, partition, DistanceMatrix, Distances, EuclideanPoints,
    HdbscanError, HdbscanParams, Label, Metric,
};

const NAME_TEMPLATE: &str = include_str!("../prompts/cluster_name.txt");
const SUMMARY_TEMPLATE: &str = include_str!("../prompts/cluster_summary.txt");

#[derive(Debug, Error, PartialEq)]
pub enum ClusteringError {
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Hdbscan(#[from] HdbscanError),
    #[error("{labels} labels for {assignments} assignments")]
    Misaligned { labels: usize, assignments: usize },
    #[error("cluster {cluster_id}: {source}")]
    Gateway {
        cluster_id: ClusterId,
        #[source]
        source: GatewayError,
    },
    #[error("cluster {0} has no members")]
    EmptyCluster(ClusterId),
    #[error("cluster {cluster_id} references unknown assignment {assignment_id}")]
    UnknownMember {
        cluster_id: ClusterId,
        assignment_id: AssignmentId,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterKind {
    Dense,
    OutlierSingleton,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicCluster {
    pub id: ClusterId,
    pub member_assignment_ids: Vec<AssignmentId>,
    /// Topic cluster name (TCN).
    pub name: String,
    /// Topic cluster summary (TCS).
    pub summary: String,
    pub kind: ClusterKind,
    pub name_provenance: Provenance,
    /// Set when membership changed after the name was generated.
    #[serde(default)]
    pub stale_name: bool,
}

impl TopicCluster {
    pub fn unnamed(id: ClusterId, members: Vec<AssignmentId>, kind: ClusterKind) -> Self {
        Self {
            id,
            member_assignment_ids: members,
            name: String::new(),
            summary: String::new(),
            kind,
            name_provenance: Provenance::Ai,
            stale_name: false,
        }
    }

    pub fn contains(&self, a: &AssignmentId) -> bool {
        self.member_assignment_ids.contains(a)
    }
}

pub fn cluster_id(n: usize) -> ClusterId {
    ClusterId::new(format!("c{n:03}"))
}

/// Builds unnamed clusters from a label vector: dense labels first in label
/// order, then one singleton per noise point in input order.
pub fn promote_outliers(
    labels: &[Label],
    assignments: &[AssignmentId],
) -> Result<Vec<TopicCluster>, ClusteringError> {
    if labels.len() != assignments.len() {
        return Err(ClusteringError::Misaligned {
            labels: labels.len(),
            assignments: assignments.len(),
        });
    }
    let k = labels
        .iter()
        .filter_map(|l| l.cluster())
        .max()
        .map_or(0, |m| m + 1);
    let mut dense: Vec<Vec<AssignmentId>> = vec![Vec::new(); k];
    let mut noise = Vec::new();
    for (l, a) in labels.iter().zip(assignments) {
        match l {
            Label::Cluster(c) => dense[*c].push(a.clone()),
            Label::Noise => noise.push(a.clone()),
        }
    }
    let mut out = Vec::with_capacity(k + noise.len());
    for members in dense.into_iter().filter(|m| !m.is_empty()) {
        out.push(TopicCluster::unnamed(
            cluster_id(out.len() + 1),
            members,
            ClusterKind::Dense,
        ));
    }
    for a in noise {
        out.push(TopicCluster::unnamed(
            cluster_id(out.len() + 1),
            vec![a],
            ClusterKind::OutlierSingleton,
        ));
    }
    Ok(out)
}

/// Persisted record of one clustering run, enough to audit every cluster
/// back to its inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringRun {
    pub params: HdbscanParams,
    pub provider_id: String,
    /// Clustered assignments in the order they were embedded.
    pub assignment_ids: Vec<AssignmentId>,
    pub topics: Vec<String>,
    pub labels: Vec<Label>,
    pub membership: Vec<ClusterMembership>,
    #[serde(default)]
    pub naming_log: Vec<NamingCall>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterMembership {
    pub cluster_id: ClusterId,
    pub kind: ClusterKind,
    pub member_assignment_ids: Vec<AssignmentId>,
}

/// Embeds and clusters every non-rejected assignment. Returns unnamed
/// clusters and the run record.
pub fn cluster_assignments(
    assignments: &[TopicAssignment],
    params: &HdbscanParams,
    provider: &dyn EmbeddingProvider,
) -> Result<(Vec<TopicCluster>, ClusteringRun), ClusteringError> {
    params.validate()?;
    let live: Vec<&TopicAssignment> = assignments.iter().filter(|a| !a.is_rejected()).collect();
    let ids: Vec<AssignmentId> = live.iter().map(|a| a.id.clone()).collect();
    let topics: Vec<String> = live.iter().map(|a| a.topic.clone()).collect();
    let labels = if live.is_empty() {
        Vec::new()
    } else {
        let vectors = embed_topics(&topics, provider)?;
        hdbscan(&vectors, params)?
    };
    let clusters = promote_outliers(&labels, &ids)?;
    let run = ClusteringRun {
        params: *params,
        provider_id: provider.id(),
        assignment_ids: ids,
        topics,
        labels,
        membership: clusters
            .iter()
            .map(|c| ClusterMembership {
                cluster_id: c.id.clone(),
                kind: c.kind,
                member_assignment_ids: c.member_assignment_ids.clone(),
            })
            .collect(),
        naming_log: Vec::new(),
        warnings: Vec::new(),
    };
    Ok((clusters, run))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamingField {
    Name,
    Summary,
}

/// One naming decision. `prompt_digest` is absent when no model call was
/// made.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NamingCall {
    pub cluster_id: ClusterId,
    pub field: NamingField,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_digest: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NamingReport {
    pub calls: Vec<NamingCall>,
    pub warnings: Vec<String>,
}

/// Renders a prompt template with the member topics as a JSON list.
pub fn render_cluster_prompt(field: NamingField, topics: &[&str]) -> String {
    let chunk = serde_json::to_string(topics).expect("strings serialize");
    let template = match field {
        NamingField::Name => NAME_TEMPLATE,
        NamingField::Summary => SUMMARY_TEMPLATE,
    };
    template.replace("{chunk}", &chunk)
}

/// Trims whitespace and a single pair of wrapping quotes.
fn clean_response(raw: &str) -> String {
    let t = text::normalize(raw);
    let unquoted = t
        .strip_prefix('"')
        .and_then(|s| s.strip_suffix('"'))
        .unwrap_or(&t);
    text::normalize(unquoted)
}

fn member_topics<'a>(
    c: &TopicCluster,
    by_id: &HashMap<&AssignmentId, &'a TopicAssignment>,
) -> Result<Vec<&'a TopicAssignment>, ClusteringError> {
    if c.member_assignment_ids.is_empty() {
        return Err(ClusteringError::EmptyCluster(c.id.clone()));
    }
    c.member_assignment_ids
        .iter()
        .map(|id| {
            by_id
                .get(id)
                .copied()
                .ok_or_else(|| ClusteringError::UnknownMember {
                    cluster_id: c.id.clone(),
                    assignment_id: id.clone(),
                })
        })
        .collect()
}

/// Generates one field for one cluster. Singletons use their own topic or
/// phrase without a model call; an empty model answer yields a fallback
/// plus a warning.
pub fn describe_cluster(
    c: &TopicCluster,
    field: NamingField,
    assignments: &[TopicAssignment],
    gateway: &dyn Gateway,
) -> Result<(String, NamingCall, Option<String>), ClusteringError> {
    let by_id: HashMap<&AssignmentId, &TopicAssignment> =
        assignments.iter().map(|a| (&a.id, a)).collect();
    describe_with(c, field, &by_id, gateway)
}

fn describe_with(
    c: &TopicCluster,
    field: NamingField,
    by_id: &HashMap<&AssignmentId, &TopicAssignment>,
    gateway: &dyn Gateway,
) -> Result<(String, NamingCall, Option<String>), ClusteringError> {
    let members = member_topics(c, by_id)?;
    let mut call = NamingCall {
        cluster_id: c.id.clone(),
        field,
        prompt_digest: None,
    };
    if c.kind == ClusterKind::OutlierSingleton {
        let m = members[0];
        let value = match field {
            NamingField::Name => m.topic.clone(),
            NamingField::Summary => m.phrase.clone(),
        };
        return Ok((value, call, None));
    }
    let topics: Vec<&str> = members.iter().map(|a| a.topic.as_str()).collect();
    let prompt = render_cluster_prompt(field, &topics);
    call.prompt_digest = Some(text::digest(&prompt));
    let raw =
        gateway::complete_prompt(gateway, &prompt).map_err(|source| ClusteringError::Gateway {
            cluster_id: c.id.clone(),
            source,
        })?;
    let value = clean_response(&raw);
    if !value.is_empty() {
        return Ok((value, call, None));
    }
    Ok(match field {
        NamingField::Name => (
            format!("Unnamed cluster {}", c.id),
            call,
            Some(format!("cluster {}: model returned an empty name", c.id)),
        ),
        NamingField::Summary => (
            String::new(),
            call,
            Some(format!("cluster {}: model returned an empty summary", c.id)),
        ),
    })
}

pub fn name_cluster(
    c: &TopicCluster,
    assignments: &[TopicAssignment],
    gateway: &dyn Gateway,
) -> Result<(String, Option<String>), ClusteringError> {
    describe_cluster(c, NamingField::Name, assignments, gateway).map(|(v, _, w)| (v, w))
}

pub fn summarize_cluster(
    c: &TopicCluster,
    assignments: &[TopicAssignment],
    gateway: &dyn Gateway,
) -> Result<(String, Option<String>), ClusteringError> {
    describe_cluster(c, NamingField::Summary, assignments, gateway).map(|(v, _, w)| (v, w))
}

/// Names and summarizes `clusters` in place, running model calls
/// concurrently up to the gateway's bound. Clusters whose name came from a
/// human are left alone.
pub fn name_clusters(
    clusters: &mut [TopicCluster],
    assignments: &[TopicAssignment],
    gateway: &dyn Gateway,
) -> Result<NamingReport, ClusteringError> {
    let by_id: HashMap<&AssignmentId, &TopicAssignment> =
        assignments.iter().map(|a| (&a.id, a)).collect();
    let jobs: Vec<(usize, NamingField)> = clusters
        .iter()
        .enumerate()
        .filter(|(_, c)| c.name_provenance == Provenance::Ai)
        .flat_map(|(i, _)| [(i, NamingField::Name), (i, NamingField::Summary)])
        .collect();
    let snapshot: &[TopicCluster] = clusters;
    let results = map_bounded(&jobs, gateway.concurrency(), |_, (i, field)| {
        describe_with(&snapshot[*i], *field, &by_id, gateway)
    });
    let mut report = NamingReport::default();
    let mut updates = Vec::with_capacity(jobs.len());
    for ((i, field), r) in jobs.iter().zip(results) {
        let (value, call, warning) = r?;
        report.calls.push(call);
        if let Some(w) = warning {
            tracing::warn!("{w}");
            report.warnings.push(w);
        }
        updates.push((*i, *field, value));
    }
    for (i, field, value) in updates {
        let c = &mut clusters[i];
        match field {
            NamingField::Name => {
                c.name = value;
                c.name_provenance = Provenance::Ai;
                c.stale_name = false;
            }
            NamingField::Summary => c.summary = value,
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extraction::AssignmentStatus;
    use crate::gateway::ScriptedStub;
    use crate::ids::TranscriptId;

    fn aid(s: &str) -> AssignmentId {
        AssignmentId::new(s)
    }

    fn assignment(id: &str, topic: &str, phrase: &str) -> TopicAssignment {
        TopicAssignment {
            id: aid(id),
            transcript_id: TranscriptId::new("t1"),
            statement_index: 1,
            topic: topic.into(),
            phrase: phrase.into(),
            research_objective_id: "RO1".into(),
            provenance: Provenance::Ai,
            status: AssignmentStatus::Proposed,
            phrase_grounded: true,
            phrase_span: None,
        }
    }

    #[test]
    fn promotion_shapes() {
        let ids: Vec<AssignmentId> = ["a", "b", "c", "d"].iter().map(|s| aid(s)).collect();
        let c = |i| Label::Cluster(i);
        let out = promote_outliers(&[c(0), c(0), c(0), Label::Noise], &ids).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].member_assignment_ids.len(), 3);
        assert_eq!(out[0].kind, ClusterKind::Dense);
        assert_eq!(out[1].kind, ClusterKind::OutlierSingleton);
        assert_eq!(out[1].id, cluster_id(2));

        let out = promote_outliers(&[Label::Noise; 4], &ids).unwrap();
        assert_eq!(out.len(), 4);
        assert!(out.iter().all(|c| c.member_assignment_ids.len() == 1));

        let out = promote_outliers(&[c(0), c(1), c(0), c(1)], &ids).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].member_assignment_ids, vec![aid("a"), aid("c")]);
        assert_eq!(out[1].member_assignment_ids, vec![aid("b"), aid("d")]);

        assert!(promote_outliers(&[c(0)], &ids).is_err());
    }

    fn dense(members: &[&str]) -> TopicCluster {
        TopicCluster::unnamed(
            cluster_id(1),
            members.iter().map(|s| aid(s)).collect(),
            ClusterKind::Dense,
        )
    }

    #[test]
    fn name_passes_through_and_falls_back() {
        let assignments = vec![assignment("a", "price", "p"), assignment("b", "cost", "q")];
        let c = dense(&["a", "b"]);
        let prompt = render_cluster_prompt(NamingField::Name, &["price", "cost"]);
        assert!(prompt.contains(r#"["price","cost"]"#));
        let stub = ScriptedStub::new().with_response(&prompt, "Onboarding friction");
        assert_eq!(
            name_cluster(&c, &assignments, &stub).unwrap(),
            ("Onboarding friction".to_string(), None)
        );
        let stub = ScriptedStub::new().with_response(&prompt, "\"\"");
        let (name, warning) = name_cluster(&c, &assignments, &stub).unwrap();
        assert_eq!(name, "Unnamed cluster c001");
        assert!(warning.is_some());
    }

    #[test]
    fn empty_summary_is_kept_empty_with_warning() {
        let assignments = vec![assignment("a", "price", "p"), assignment("b", "cost", "q")];
        let c = dense(&["a", "b"]);
        let prompt = render_cluster_prompt(NamingField::Summary, &["price", "cost"]);
        let stub = ScriptedStub::new().with_response(&prompt, "  ");
        let (summary, warning) = summarize_cluster(&c, &assignments, &stub).unwrap();
        assert_eq!(summary, "");
        assert!(warning.is_some());
    }

    #[test]
    fn singletons_skip_the_model() {
        let assignments = vec![assignment("a", "gpu kernels", "the kernels were slow")];
        let mut clusters = vec![TopicCluster::unnamed(
            cluster_id(1),
            vec![aid("a")],
            ClusterKind::OutlierSingleton,
        )];
        let stub = ScriptedStub::new();
        let report = name_clusters(&mut clusters, &assignments, &stub).unwrap();
        assert!(stub.calls().is_empty());
        assert!(report.calls.iter().all(|c| c.prompt_digest.is_none()));
        assert_eq!(clusters[0].name, "gpu kernels");
        assert_eq!(clusters[0].summary, "the kernels were slow");
    }

    #[test]
    fn gateway_errors_carry_the_cluster() {
        let assignments = vec![assignment("a", "x", "p"), assignment("b", "y", "q")];
        let mut clusters = vec![dense(&["a", "b"])];
        match name_clusters(&mut clusters, &assignments, &ScriptedStub::new()) {
            Err(ClusteringError::Gateway { cluster_id: id, .. }) => assert_eq!(id, cluster_id(1)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rerun_is_identical_and_covers_all_live_assignments() {
        let mut assignments: Vec<TopicAssignment> = [
            "pricing concerns",
            "price worries",
            "pricing complaints",
            "gpu kernels",
            "gpu kernel speed",
            "gpu kernel tuning",
            "onboarding",
        ]
        .iter()
        .enumerate()
        .map(|(i, t)| assignment(&format!("a{i}"), t, t))
        .collect();
        assignments[6].status = AssignmentStatus::Rejected;
        let p = HdbscanParams::default();
        let (c1, r1) = cluster_assignments(&assignments, &p, &NgramHashEmbedder).unwrap();
        let (c2, r2) = cluster_assignments(&assignments, &p, &NgramHashEmbedder).unwrap();
        assert_eq!(c1, c2);
        assert_eq!(r1, r2);
        let mut covered: Vec<&AssignmentId> =
            c1.iter().flat_map(|c| &c.member_assignment_ids).collect();
        covered.sort();
        let mut live: Vec<&AssignmentId> = assignments[..6].iter().map(|a| &a.id).collect();
        live.sort();
        assert_eq!(covered, live);
        for c in &c1 {
            if c.kind == ClusterKind::Dense {
                assert!(c.member_assignment_ids.len() >= p.min_cluster_size);
            }
        }
    }
}
