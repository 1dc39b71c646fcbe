//! Reviewer judgements, acceptance statistics and in-place edits.
//!
//! Per-assignment reviews carry Q1 to Q3 plus the accept flag and optional
//! revisions. Q4 and Q5 are rated once per cluster in [`ClusterReview`].

mod edit;
mod table;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extraction::match_objective;
use crate::ids::{AssignmentId, ClusterId};
use crate::state::{Change, EditKind, Entity, ProjectState, Target};
use crate::text;

pub(crate) use edit::plan_reextraction;
pub use edit::{plan_edit, EditError, EditRequest};
pub use table::{
    column_for_field, export_review_table, import_review_table, parse_review_table,
    ImportedReviews, RowError, REVIEW_COLUMNS,
};

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum ReviewError {
    #[error("{field}: {rule}")]
    Field { field: String, rule: String },
    #[error("unknown assignment {0}")]
    UnknownAssignment(AssignmentId),
    #[error("unknown cluster {0}")]
    UnknownCluster(ClusterId),
    #[error("review is identical to the stored one")]
    Unchanged,
}

impl ReviewError {
    fn field(field: &str, rule: impl Into<String>) -> Self {
        ReviewError::Field {
            field: field.into(),
            rule: rule.into(),
        }
    }

    /// Field the error refers to, if any.
    pub fn field_name(&self) -> Option<&str> {
        match self {
            ReviewError::Field { field, .. } => Some(field),
            _ => None,
        }
    }
}

/// A reviewer's judgement of one topic assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewRecord {
    pub reviewer_id: String,
    pub assignment_id: AssignmentId,
    /// Q1: topic matches the statement, 1..=5.
    pub q1_topic_match: u8,
    /// Q2: research objective matches the statement, 1..=5.
    pub q2_ro_match: u8,
    /// Q3: topic matches the cluster name, 1..=5.
    pub q3_topic_tcn_match: u8,
    pub accept_ai: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revised_topic: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revised_ro: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revised_tcn: Option<String>,
}

/// A reviewer's judgement of one cluster's name and summary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterReview {
    pub reviewer_id: String,
    pub cluster_id: ClusterId,
    /// Q4: name is a good representative title, 1..=5.
    pub q4_tcn_representative: u8,
    /// Q5: summary is a good representative description, 1..=5.
    pub q5_tcs_representative: u8,
}

fn check_rating(field: &str, v: u8) -> Result<(), ReviewError> {
    if (1..=5).contains(&v) {
        Ok(())
    } else {
        Err(ReviewError::field(
            field,
            format!("rating must be 1 to 5, got {v}"),
        ))
    }
}

fn check_reviewer(id: &str) -> Result<(), ReviewError> {
    if id.trim().is_empty() {
        Err(ReviewError::field("reviewer_id", "must not be empty"))
    } else {
        Ok(())
    }
}

fn clean_optional(v: &Option<String>) -> Option<String> {
    v.as_deref().map(text::normalize).filter(|s| !s.is_empty())
}

impl ReviewRecord {
    /// Blank revision strings count as absent.
    pub fn normalized(mut self) -> Self {
        self.reviewer_id = text::normalize(&self.reviewer_id);
        self.revised_topic = clean_optional(&self.revised_topic);
        self.revised_ro = clean_optional(&self.revised_ro);
        self.revised_tcn = clean_optional(&self.revised_tcn);
        self
    }

    pub fn has_revision(&self) -> bool {
        self.revised_topic.is_some() || self.revised_ro.is_some() || self.revised_tcn.is_some()
    }

    pub fn validate(&self) -> Result<(), ReviewError> {
        check_reviewer(&self.reviewer_id)?;
        check_rating("q1_topic_match", self.q1_topic_match)?;
        check_rating("q2_ro_match", self.q2_ro_match)?;
        check_rating("q3_topic_tcn_match", self.q3_topic_tcn_match)?;
        if !self.accept_ai && !self.has_revision() {
            return Err(ReviewError::field(
                "accept_ai",
                "a rejected analysis needs at least one revised value (topic, RO or TCN)",
            ));
        }
        if self.accept_ai {
            for (field, v) in [
                ("revised_topic", &self.revised_topic),
                ("revised_ro", &self.revised_ro),
                ("revised_tcn", &self.revised_tcn),
            ] {
                if v.is_some() {
                    return Err(ReviewError::field(
                        field,
                        "must be empty when the analysis is accepted",
                    ));
                }
            }
        }
        Ok(())
    }
}

impl ClusterReview {
    pub fn validate(&self) -> Result<(), ReviewError> {
        check_reviewer(&self.reviewer_id)?;
        check_rating("q4_tcn_representative", self.q4_tcn_representative)?;
        check_rating("q5_tcs_representative", self.q5_tcs_representative)
    }
}

/// Validates `r` against the project and produces the change that stores
/// it. A second review by the same reviewer replaces the first.
pub fn plan_review(state: &ProjectState, r: ReviewRecord) -> Result<Change, ReviewError> {
    let mut r = r.normalized();
    r.validate()?;
    if !state.assignments.contains_key(&r.assignment_id) {
        return Err(ReviewError::UnknownAssignment(r.assignment_id));
    }
    if let Some(raw) = r.revised_ro.take() {
        let id = match_objective(&raw, &state.objectives).ok_or_else(|| {
            ReviewError::field(
                "revised_ro",
                format!("`{raw}` is not a configured research objective"),
            )
        })?;
        r.revised_ro = Some(id);
    }
    let entity = Entity::Review(r.clone());
    let before: Vec<Entity> = state.get(&entity.key()).into_iter().collect();
    let change = Change {
        kind: EditKind::RecordReview,
        target: Target::Assignment(r.assignment_id),
        before,
        after: vec![entity],
    };
    if change.is_noop() {
        return Err(ReviewError::Unchanged);
    }
    Ok(change)
}

pub fn plan_cluster_review(state: &ProjectState, r: ClusterReview) -> Result<Change, ReviewError> {
    let mut r = r;
    r.reviewer_id = text::normalize(&r.reviewer_id);
    r.validate()?;
    if !state.clusters.contains_key(&r.cluster_id) {
        return Err(ReviewError::UnknownCluster(r.cluster_id));
    }
    let entity = Entity::ClusterReview(r.clone());
    let before: Vec<Entity> = state.get(&entity.key()).into_iter().collect();
    let change = Change {
        kind: EditKind::RecordClusterReview,
        target: Target::Cluster(r.cluster_id),
        before,
        after: vec![entity],
    };
    if change.is_noop() {
        return Err(ReviewError::Unchanged);
    }
    Ok(change)
}

/// Per-item acceptance after crediting items the reviewer left unrevised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjustedAcceptance {
    pub topic: bool,
    pub ro: bool,
    pub tcn: bool,
}

/// An item counts as accepted when the analysis was accepted outright or
/// when the reviewer rejected it without revising that particular item.
pub fn adjusted_acceptance(r: &ReviewRecord) -> AdjustedAcceptance {
    AdjustedAcceptance {
        topic: r.accept_ai || r.revised_topic.is_none(),
        ro: r.accept_ai || r.revised_ro.is_none(),
        tcn: r.accept_ai || r.revised_tcn.is_none(),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct YesCounts {
    /// Records with `accept_ai = true`.
    pub raw: usize,
    /// Records whose adjusted flag for this item is true.
    pub adjusted: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptanceSummary {
    pub records: usize,
    /// Topic item, rated by Q1.
    pub q1_topic: YesCounts,
    /// RO item, rated by Q2.
    pub q2_ro: YesCounts,
    /// TCN item, rated by Q3.
    pub q3_tcn: YesCounts,
}

pub fn acceptance_summary<'a>(
    records: impl IntoIterator<Item = &'a ReviewRecord>,
) -> AcceptanceSummary {
    let mut s = AcceptanceSummary::default();
    for r in records {
        let adj = adjusted_acceptance(r);
        s.records += 1;
        for (counts, flag) in [
            (&mut s.q1_topic, adj.topic),
            (&mut s.q2_ro, adj.ro),
            (&mut s.q3_tcn, adj.tcn),
        ] {
            counts.raw += usize::from(r.accept_ai);
            counts.adjusted += usize::from(flag);
        }
    }
    s
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QuestionHistogram {
    /// `counts[k]` is the number of ratings equal to `k + 1`.
    pub counts: [usize; 5],
    pub total: usize,
    /// Share of ratings at 4 or 5; absent when there are no ratings.
    pub proportion_high: Option<f64>,
}

impl QuestionHistogram {
    fn add(&mut self, rating: u8) {
        if (1..=5).contains(&rating) {
            self.counts[rating as usize - 1] += 1;
            self.total += 1;
        }
    }

    fn finish(&mut self) {
        self.proportion_high =
            (self.total > 0).then(|| (self.counts[3] + self.counts[4]) as f64 / self.total as f64);
    }
}

/// Histograms keyed `q1` to `q5`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RatingDistribution {
    pub questions: BTreeMap<String, QuestionHistogram>,
}

pub fn rating_distribution<'a>(
    records: impl IntoIterator<Item = &'a ReviewRecord>,
    cluster_reviews: impl IntoIterator<Item = &'a ClusterReview>,
) -> RatingDistribution {
    let mut h: [QuestionHistogram; 5] = Default::default();
    for r in records {
        h[0].add(r.q1_topic_match);
        h[1].add(r.q2_ro_match);
        h[2].add(r.q3_topic_tcn_match);
    }
    for r in cluster_reviews {
        h[3].add(r.q4_tcn_representative);
        h[4].add(r.q5_tcs_representative);
    }
    let mut questions = BTreeMap::new();
    for (i, mut q) in h.into_iter().enumerate() {
        q.finish();
        questions.insert(format!("q{}", i + 1), q);
    }
    RatingDistribution { questions }
}

/// Distinct TCN revisions proposed for one cluster by different reviewers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TcnConflict {
    pub cluster_id: ClusterId,
    /// (reviewer, proposed name), sorted.
    pub revisions: Vec<(String, String)>,
}

/// Clusters for which reviewers proposed more than one distinct new name.
pub fn tcn_conflicts(state: &ProjectState) -> Vec<TcnConflict> {
    let mut by_cluster: BTreeMap<ClusterId, Vec<(String, String)>> = BTreeMap::new();
    for r in state.reviews.values() {
        let (Some(tcn), Some(c)) = (&r.revised_tcn, state.cluster_of(&r.assignment_id)) else {
            continue;
        };
        by_cluster
            .entry(c.id.clone())
            .or_default()
            .push((r.reviewer_id.clone(), tcn.clone()));
    }
    by_cluster
        .into_iter()
        .filter_map(|(cluster_id, mut revisions)| {
            revisions.sort();
            revisions.dedup();
            let mut names: Vec<String> = revisions.iter().map(|(_, n)| text::fold(n)).collect();
            names.sort();
            names.dedup();
            (names.len() > 1).then_some(TcnConflict {
                cluster_id,
                revisions,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn record(accept: bool, topic: bool, ro: bool, tcn: bool) -> ReviewRecord {
        let some = |b: bool, v: &str| b.then(|| v.to_string());
        ReviewRecord {
            reviewer_id: "sme1".into(),
            assignment_id: AssignmentId::new("a1"),
            q1_topic_match: 4,
            q2_ro_match: 3,
            q3_topic_tcn_match: 5,
            accept_ai: accept,
            revised_topic: some(topic, "billing confusion"),
            revised_ro: some(ro, "RO2"),
            revised_tcn: some(tcn, "Billing"),
        }
    }

    #[test]
    fn validation_names_the_field() {
        assert!(record(true, false, false, false).validate().is_ok());
        let e = record(false, false, false, false).validate().unwrap_err();
        assert_eq!(e.field_name(), Some("accept_ai"));
        assert!(record(false, true, false, false).validate().is_ok());
        let e = record(true, false, true, false).validate().unwrap_err();
        assert_eq!(e.field_name(), Some("revised_ro"));
        let mut r = record(true, false, false, false);
        r.q2_ro_match = 0;
        assert_eq!(r.validate().unwrap_err().field_name(), Some("q2_ro_match"));
        r.q2_ro_match = 6;
        assert_eq!(r.validate().unwrap_err().field_name(), Some("q2_ro_match"));
    }

    #[test]
    fn blank_revisions_are_absent() {
        let mut r = record(false, false, false, false);
        r.revised_topic = Some("   ".into());
        assert!(r.clone().normalized().validate().is_err());
        r.revised_tcn = Some(" Billing ".into());
        assert_eq!(r.normalized().revised_tcn.as_deref(), Some("Billing"));
    }

    #[test]
    fn adjusted_examples() {
        let all = |b| AdjustedAcceptance {
            topic: b,
            ro: b,
            tcn: b,
        };
        assert_eq!(
            adjusted_acceptance(&record(true, false, false, false)),
            all(true)
        );
        assert_eq!(
            adjusted_acceptance(&record(false, false, true, false)),
            AdjustedAcceptance {
                topic: true,
                ro: false,
                tcn: true
            }
        );
        assert_eq!(
            adjusted_acceptance(&record(false, true, true, true)),
            all(false)
        );
    }

    #[test]
    fn histogram_shapes() {
        let r = ReviewRecord {
            q1_topic_match: 5,
            q2_ro_match: 5,
            q3_topic_tcn_match: 5,
            ..record(true, false, false, false)
        };
        let d = rating_distribution([&r], []);
        for q in ["q1", "q2", "q3"] {
            assert_eq!(d.questions[q].counts, [0, 0, 0, 0, 1]);
            assert_eq!(d.questions[q].proportion_high, Some(1.0));
        }
        assert_eq!(d.questions["q4"].total, 0);
        assert_eq!(d.questions["q4"].proportion_high, None);

        let empty = rating_distribution([], []);
        assert_eq!(empty.questions.len(), 5);
        assert!(empty.questions.values().all(|q| q.counts == [0; 5]));
    }

    #[test]
    fn eighty_percent_high() {
        // 10 records: 8 rated 4 or 5 on Q1, 2 rated lower
        let rs: Vec<ReviewRecord> = [5, 4, 5, 4, 4, 5, 4, 5, 2, 3]
            .iter()
            .map(|&q| ReviewRecord {
                q1_topic_match: q,
                ..record(true, false, false, false)
            })
            .collect();
        let d = rating_distribution(&rs, []);
        assert_eq!(d.questions["q1"].proportion_high, Some(0.8));
    }
}
