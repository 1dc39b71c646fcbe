//! Logical project state and the append-only edit events that build it.
//!
//! Every mutation is expressed as an [`EditEvent`] holding the entities it
//! replaces (`before`) and the ones it writes (`after`). Folding the event
//! log over an empty state reproduces the current state, which is how
//! history replay and integrity checks work.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::TopicCluster;
use crate::extraction::{TopicAssignment, UNMATCHED};
use crate::ids::{AssignmentId, ClusterId, EventId, TranscriptId};
use crate::review::{ClusterReview, ReviewRecord};
use crate::transcript::{ResearchObjective, Transcript};

/// Entities that live in a keyed collection.
pub trait Keyed {
    type Key: Ord + Clone;
    fn key(&self) -> Self::Key;
}

impl Keyed for Transcript {
    type Key = TranscriptId;
    fn key(&self) -> TranscriptId {
        self.id.clone()
    }
}

impl Keyed for TopicAssignment {
    type Key = AssignmentId;
    fn key(&self) -> AssignmentId {
        self.id.clone()
    }
}

impl Keyed for TopicCluster {
    type Key = ClusterId;
    fn key(&self) -> ClusterId {
        self.id.clone()
    }
}

impl Keyed for ReviewRecord {
    type Key = (String, AssignmentId);
    fn key(&self) -> Self::Key {
        (self.reviewer_id.clone(), self.assignment_id.clone())
    }
}

impl Keyed for ClusterReview {
    type Key = (String, ClusterId);
    fn key(&self) -> Self::Key {
        (self.reviewer_id.clone(), self.cluster_id.clone())
    }
}

impl Keyed for ShareGrant {
    type Key = String;
    fn key(&self) -> String {
        self.token_digest.clone()
    }
}

/// Serializes a keyed map as a plain list in key order.
pub mod as_list {
    use super::Keyed;
    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;

    pub fn serialize<S, V>(m: &BTreeMap<V::Key, V>, s: S) -> Result<S::Ok, S::Error>
    where
        S: Serializer,
        V: Keyed + Serialize,
    {
        s.collect_seq(m.values())
    }

    pub fn deserialize<'de, D, V>(d: D) -> Result<BTreeMap<V::Key, V>, D::Error>
    where
        D: Deserializer<'de>,
        V: Keyed + Deserialize<'de>,
    {
        let items = Vec::<V>::deserialize(d)?;
        let n = items.len();
        let map: BTreeMap<V::Key, V> = items.into_iter().map(|v| (v.key(), v)).collect();
        if map.len() != n {
            return Err(D::Error::custom("duplicate keys in list"));
        }
        Ok(map)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShareMode {
    ReadOnly,
}

/// A share link. Only the digest of the token is kept, so the token itself
/// never appears in stored files or the edit log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShareGrant {
    pub token_digest: String,
    pub mode: ShareMode,
    pub created_at: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProjectState {
    #[serde(default)]
    pub objectives: Vec<ResearchObjective>,
    #[serde(default, with = "as_list")]
    pub transcripts: BTreeMap<TranscriptId, Transcript>,
    #[serde(default, with = "as_list")]
    pub assignments: BTreeMap<AssignmentId, TopicAssignment>,
    #[serde(default, with = "as_list")]
    pub clusters: BTreeMap<ClusterId, TopicCluster>,
    #[serde(default, with = "as_list")]
    pub reviews: BTreeMap<(String, AssignmentId), ReviewRecord>,
    #[serde(default, with = "as_list")]
    pub cluster_reviews: BTreeMap<(String, ClusterId), ClusterReview>,
    #[serde(default, with = "as_list")]
    pub shares: BTreeMap<String, ShareGrant>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "entity", content = "value", rename_all = "snake_case")]
pub enum Entity {
    Objectives(Vec<ResearchObjective>),
    Transcript(Transcript),
    Assignment(TopicAssignment),
    Cluster(TopicCluster),
    Review(ReviewRecord),
    ClusterReview(ClusterReview),
    Share(ShareGrant),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "entity", rename_all = "snake_case")]
pub enum EntityKey {
    Objectives,
    Transcript {
        id: TranscriptId,
    },
    Assignment {
        id: AssignmentId,
    },
    Cluster {
        id: ClusterId,
    },
    Review {
        reviewer_id: String,
        assignment_id: AssignmentId,
    },
    ClusterReview {
        reviewer_id: String,
        cluster_id: ClusterId,
    },
    Share {
        token_digest: String,
    },
}

impl Entity {
    pub fn key(&self) -> EntityKey {
        match self {
            Entity::Objectives(_) => EntityKey::Objectives,
            Entity::Transcript(t) => EntityKey::Transcript { id: t.id.clone() },
            Entity::Assignment(a) => EntityKey::Assignment { id: a.id.clone() },
            Entity::Cluster(c) => EntityKey::Cluster { id: c.id.clone() },
            Entity::Review(r) => EntityKey::Review {
                reviewer_id: r.reviewer_id.clone(),
                assignment_id: r.assignment_id.clone(),
            },
            Entity::ClusterReview(r) => EntityKey::ClusterReview {
                reviewer_id: r.reviewer_id.clone(),
                cluster_id: r.cluster_id.clone(),
            },
            Entity::Share(s) => EntityKey::Share {
                token_digest: s.token_digest.clone(),
            },
        }
    }
}

/// What an edit is about, for display and filtering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "id", rename_all = "snake_case")]
pub enum Target {
    Project,
    Transcript(TranscriptId),
    Assignment(AssignmentId),
    Cluster(ClusterId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditKind {
    RenameTopic,
    ReassignRo,
    RenameCluster,
    EditSummary,
    MoveAssignment,
    MergeClusters,
    SplitCluster,
    Reject,
    Restore,
    RecordReview,
    RecordClusterReview,
    IngestTranscript,
    SetObjectives,
    AiExtraction,
    AiClustering,
    AiNaming,
    CreateShare,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditEvent {
    pub id: EventId,
    pub actor_id: String,
    pub kind: EditKind,
    pub target: Target,
    pub before: Vec<Entity>,
    pub after: Vec<Entity>,
    /// Milliseconds since the Unix epoch.
    pub at: u64,
}

pub fn event_id(seq: usize) -> EventId {
    EventId::new(format!("e{seq:06}"))
}

/// An event before it is stamped with id, actor and time.
#[derive(Debug, Clone, PartialEq)]
pub struct Change {
    pub kind: EditKind,
    pub target: Target,
    pub before: Vec<Entity>,
    pub after: Vec<Entity>,
}

impl Change {
    pub fn is_noop(&self) -> bool {
        let mut before = self.before.clone();
        let mut after = self.after.clone();
        before.sort_by_key(Entity::key);
        after.sort_by_key(Entity::key);
        before == after
    }

    pub fn stamp(self, id: EventId, actor_id: impl Into<String>, at: u64) -> EditEvent {
        EditEvent {
            id,
            actor_id: actor_id.into(),
            kind: self.kind,
            target: self.target,
            before: self.before,
            after: self.after,
            at,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ReplayError {
    #[error("event {event}: state for {key:?} does not match the recorded before snapshot")]
    Diverged { event: EventId, key: EntityKey },
    #[error("event {event}: before and after snapshots are identical")]
    Noop { event: EventId },
    #[error("event {found} out of sequence, expected {expected}")]
    Sequence { expected: EventId, found: EventId },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IntegrityError {
    #[error("assignment {assignment} references missing transcript {transcript}")]
    MissingTranscript {
        assignment: AssignmentId,
        transcript: TranscriptId,
    },
    #[error(
        "assignment {assignment} references statement {index}, which is not an interviewee turn"
    )]
    MissingTurn {
        assignment: AssignmentId,
        index: usize,
    },
    #[error("assignment {assignment} references unknown research objective {objective}")]
    MissingObjective {
        assignment: AssignmentId,
        objective: String,
    },
    #[error("cluster {cluster} references missing assignment {assignment}")]
    MissingMember {
        cluster: ClusterId,
        assignment: AssignmentId,
    },
    #[error("cluster {cluster} contains rejected assignment {assignment}")]
    RejectedMember {
        cluster: ClusterId,
        assignment: AssignmentId,
    },
    #[error("assignment {assignment} is in more than one cluster")]
    DuplicateMember { assignment: AssignmentId },
    #[error("assignment {assignment} is in no cluster")]
    Unclustered { assignment: AssignmentId },
    #[error("cluster {cluster} has no members")]
    EmptyCluster { cluster: ClusterId },
    #[error("outlier singleton {cluster} has {members} members")]
    SingletonSize { cluster: ClusterId, members: usize },
    #[error("review by {reviewer} references missing assignment {assignment}")]
    ReviewTarget {
        reviewer: String,
        assignment: AssignmentId,
    },
    #[error("cluster review by {reviewer} references missing cluster {cluster}")]
    ClusterReviewTarget {
        reviewer: String,
        cluster: ClusterId,
    },
}

impl ProjectState {
    pub fn get(&self, key: &EntityKey) -> Option<Entity> {
        match key {
            EntityKey::Objectives => {
                (!self.objectives.is_empty()).then(|| Entity::Objectives(self.objectives.clone()))
            }
            EntityKey::Transcript { id } => {
                self.transcripts.get(id).cloned().map(Entity::Transcript)
            }
            EntityKey::Assignment { id } => {
                self.assignments.get(id).cloned().map(Entity::Assignment)
            }
            EntityKey::Cluster { id } => self.clusters.get(id).cloned().map(Entity::Cluster),
            EntityKey::Review {
                reviewer_id,
                assignment_id,
            } => self
                .reviews
                .get(&(reviewer_id.clone(), assignment_id.clone()))
                .cloned()
                .map(Entity::Review),
            EntityKey::ClusterReview {
                reviewer_id,
                cluster_id,
            } => self
                .cluster_reviews
                .get(&(reviewer_id.clone(), cluster_id.clone()))
                .cloned()
                .map(Entity::ClusterReview),
            EntityKey::Share { token_digest } => {
                self.shares.get(token_digest).cloned().map(Entity::Share)
            }
        }
    }

    fn remove(&mut self, key: &EntityKey) {
        match key {
            EntityKey::Objectives => self.objectives.clear(),
            EntityKey::Transcript { id } => {
                self.transcripts.remove(id);
            }
            EntityKey::Assignment { id } => {
                self.assignments.remove(id);
            }
            EntityKey::Cluster { id } => {
                self.clusters.remove(id);
            }
            EntityKey::Review {
                reviewer_id,
                assignment_id,
            } => {
                self.reviews
                    .remove(&(reviewer_id.clone(), assignment_id.clone()));
            }
            EntityKey::ClusterReview {
                reviewer_id,
                cluster_id,
            } => {
                self.cluster_reviews
                    .remove(&(reviewer_id.clone(), cluster_id.clone()));
            }
            EntityKey::Share { token_digest } => {
                self.shares.remove(token_digest);
            }
        }
    }

    fn put(&mut self, e: Entity) {
        match e {
            Entity::Objectives(o) => self.objectives = o,
            Entity::Transcript(t) => {
                self.transcripts.insert(t.key(), t);
            }
            Entity::Assignment(a) => {
                self.assignments.insert(a.key(), a);
            }
            Entity::Cluster(c) => {
                self.clusters.insert(c.key(), c);
            }
            Entity::Review(r) => {
                self.reviews.insert(r.key(), r);
            }
            Entity::ClusterReview(r) => {
                self.cluster_reviews.insert(r.key(), r);
            }
            Entity::Share(s) => {
                self.shares.insert(s.key(), s);
            }
        }
    }

    /// Applies one event, first checking that the state matches what the
    /// event says it replaced.
    pub fn apply(&mut self, e: &EditEvent) -> Result<(), ReplayError> {
        let before: BTreeSet<EntityKey> = e.before.iter().map(Entity::key).collect();
        for b in &e.before {
            if self.get(&b.key()).as_ref() != Some(b) {
                return Err(ReplayError::Diverged {
                    event: e.id.clone(),
                    key: b.key(),
                });
            }
        }
        for a in &e.after {
            let key = a.key();
            if !before.contains(&key) && self.get(&key).is_some() {
                return Err(ReplayError::Diverged {
                    event: e.id.clone(),
                    key,
                });
            }
        }
        for key in &before {
            self.remove(key);
        }
        for a in &e.after {
            self.put(a.clone());
        }
        Ok(())
    }

    /// Rebuilds state from an empty project by folding `events` in order.
    pub fn replay<'a>(
        events: impl IntoIterator<Item = &'a EditEvent>,
    ) -> Result<Self, ReplayError> {
        let mut state = Self::default();
        for (seq, e) in events.into_iter().enumerate() {
            let expected = event_id(seq + 1);
            if e.id != expected {
                return Err(ReplayError::Sequence {
                    expected,
                    found: e.id.clone(),
                });
            }
            let change = Change {
                kind: e.kind,
                target: e.target.clone(),
                before: e.before.clone(),
                after: e.after.clone(),
            };
            if change.is_noop() {
                return Err(ReplayError::Noop {
                    event: e.id.clone(),
                });
            }
            state.apply(e)?;
        }
        Ok(state)
    }

    pub fn cluster_of(&self, a: &AssignmentId) -> Option<&TopicCluster> {
        self.clusters.values().find(|c| c.contains(a))
    }

    /// Checks referential integrity and, when any clusters exist, that the
    /// non-rejected assignments form a total partition over them.
    pub fn check_integrity(&self) -> Result<(), IntegrityError> {
        let objective_ids: BTreeSet<&str> = self.objectives.iter().map(|o| o.id.as_str()).collect();
        for a in self.assignments.values() {
            let t = self.transcripts.get(&a.transcript_id).ok_or_else(|| {
                IntegrityError::MissingTranscript {
                    assignment: a.id.clone(),
                    transcript: a.transcript_id.clone(),
                }
            })?;
            if !t.is_statement(a.statement_index) {
                return Err(IntegrityError::MissingTurn {
                    assignment: a.id.clone(),
                    index: a.statement_index,
                });
            }
            if a.research_objective_id != UNMATCHED
                && !objective_ids.contains(a.research_objective_id.as_str())
            {
                return Err(IntegrityError::MissingObjective {
                    assignment: a.id.clone(),
                    objective: a.research_objective_id.clone(),
                });
            }
        }
        let mut seen: BTreeSet<&AssignmentId> = BTreeSet::new();
        for c in self.clusters.values() {
            if c.member_assignment_ids.is_empty() {
                return Err(IntegrityError::EmptyCluster {
                    cluster: c.id.clone(),
                });
            }
            if c.kind == crate::clustering::ClusterKind::OutlierSingleton
                && c.member_assignment_ids.len() != 1
            {
                return Err(IntegrityError::SingletonSize {
                    cluster: c.id.clone(),
                    members: c.member_assignment_ids.len(),
                });
            }
            for m in &c.member_assignment_ids {
                let a = self
                    .assignments
                    .get(m)
                    .ok_or_else(|| IntegrityError::MissingMember {
                        cluster: c.id.clone(),
                        assignment: m.clone(),
                    })?;
                if a.is_rejected() {
                    return Err(IntegrityError::RejectedMember {
                        cluster: c.id.clone(),
                        assignment: m.clone(),
                    });
                }
                if !seen.insert(m) {
                    return Err(IntegrityError::DuplicateMember {
                        assignment: m.clone(),
                    });
                }
            }
        }
        if !self.clusters.is_empty() {
            if let Some(a) = self
                .assignments
                .values()
                .find(|a| !a.is_rejected() && !seen.contains(&a.id))
            {
                return Err(IntegrityError::Unclustered {
                    assignment: a.id.clone(),
                });
            }
        }
        for r in self.reviews.values() {
            if !self.assignments.contains_key(&r.assignment_id) {
                return Err(IntegrityError::ReviewTarget {
                    reviewer: r.reviewer_id.clone(),
                    assignment: r.assignment_id.clone(),
                });
            }
        }
        for r in self.cluster_reviews.values() {
            if !self.clusters.contains_key(&r.cluster_id) {
                return Err(IntegrityError::ClusterReviewTarget {
                    reviewer: r.reviewer_id.clone(),
                    cluster: r.cluster_id.clone(),
                });
            }
        }
        Ok(())
    }
}
