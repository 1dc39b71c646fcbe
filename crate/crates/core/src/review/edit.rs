use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{cluster_id, ClusterKind, TopicCluster};
use crate::extraction::{match_objective, AssignmentStatus, Provenance, TopicAssignment};
use crate::ids::{AssignmentId, ClusterId, TranscriptId};
use crate::state::{Change, EditKind, Entity, EntityKey, ProjectState, Target};
use crate::text;

/// A user-initiated edit, before it is checked against the project.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EditRequest {
    RenameTopic {
        assignment_id: AssignmentId,
        topic: String,
    },
    ReassignRo {
        assignment_id: AssignmentId,
        research_objective_id: String,
    },
    RenameCluster {
        cluster_id: ClusterId,
        name: String,
    },
    EditSummary {
        cluster_id: ClusterId,
        summary: String,
    },
    /// Moves an assignment to another cluster, or into a new singleton when
    /// no destination is given.
    MoveAssignment {
        assignment_id: AssignmentId,
        #[serde(default)]
        to_cluster_id: Option<ClusterId>,
    },
    /// Merges every listed cluster into the first one.
    MergeClusters {
        cluster_ids: Vec<ClusterId>,
    },
    /// Moves the listed members of a cluster into a new cluster.
    SplitCluster {
        cluster_id: ClusterId,
        assignment_ids: Vec<AssignmentId>,
    },
    Reject {
        assignment_id: AssignmentId,
    },
    Restore {
        assignment_id: AssignmentId,
        #[serde(default)]
        to_cluster_id: Option<ClusterId>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EditError {
    #[error("unknown assignment {0}")]
    UnknownAssignment(AssignmentId),
    #[error("unknown cluster {0}")]
    UnknownCluster(ClusterId),
    #[error("assignment {0} is rejected; restore it before editing")]
    Rejected(AssignmentId),
    #[error("assignment {0} is not rejected")]
    NotRejected(AssignmentId),
    #[error("partition violation: {0}")]
    Partition(String),
    #[error("{0}")]
    Invalid(String),
    #[error("edit changes nothing")]
    Noop,
}

/// Pending entity writes on top of a read-only state.
struct Draft<'a> {
    state: &'a ProjectState,
    changed: BTreeMap<EntityKey, Option<Entity>>,
}

impl<'a> Draft<'a> {
    fn new(state: &'a ProjectState) -> Self {
        Self {
            state,
            changed: BTreeMap::new(),
        }
    }

    fn current(&self, key: &EntityKey) -> Option<Entity> {
        match self.changed.get(key) {
            Some(v) => v.clone(),
            None => self.state.get(key),
        }
    }

    fn assignment(&self, id: &AssignmentId) -> Result<TopicAssignment, EditError> {
        match self.current(&EntityKey::Assignment { id: id.clone() }) {
            Some(Entity::Assignment(a)) => Ok(a),
            _ => Err(EditError::UnknownAssignment(id.clone())),
        }
    }

    fn live_assignment(&self, id: &AssignmentId) -> Result<TopicAssignment, EditError> {
        let a = self.assignment(id)?;
        if a.is_rejected() {
            return Err(EditError::Rejected(id.clone()));
        }
        Ok(a)
    }

    fn cluster(&self, id: &ClusterId) -> Result<TopicCluster, EditError> {
        match self.current(&EntityKey::Cluster { id: id.clone() }) {
            Some(Entity::Cluster(c)) => Ok(c),
            _ => Err(EditError::UnknownCluster(id.clone())),
        }
    }

    fn cluster_of(&self, a: &AssignmentId) -> Option<TopicCluster> {
        let mut ids: Vec<ClusterId> = self.state.clusters.keys().cloned().collect();
        for key in self.changed.keys() {
            if let EntityKey::Cluster { id } = key {
                ids.push(id.clone());
            }
        }
        ids.sort();
        ids.dedup();
        ids.iter()
            .filter_map(|id| self.cluster(id).ok())
            .find(|c| c.contains(a))
    }

    fn put(&mut self, e: Entity) {
        self.changed.insert(e.key(), Some(e));
    }

    fn delete_cluster(&mut self, id: &ClusterId) {
        self.changed
            .insert(EntityKey::Cluster { id: id.clone() }, None);
        // reviews of a cluster that no longer exists would dangle
        for r in self
            .state
            .cluster_reviews
            .values()
            .filter(|r| &r.cluster_id == id)
        {
            self.changed
                .insert(Entity::ClusterReview(r.clone()).key(), None);
        }
    }

    fn next_cluster_id(&self) -> ClusterId {
        let max = self
            .state
            .clusters
            .keys()
            .chain(self.changed.keys().filter_map(|k| match k {
                EntityKey::Cluster { id } => Some(id),
                _ => None,
            }))
            .filter_map(|id| id.as_str().strip_prefix('c')?.parse::<usize>().ok())
            .max()
            .unwrap_or(0);
        cluster_id(max + 1)
    }

    fn any_clusters(&self) -> bool {
        !self.state.clusters.is_empty()
            || self
                .changed
                .iter()
                .any(|(k, v)| matches!(k, EntityKey::Cluster { .. }) && v.is_some())
    }

    /// Removes `a` from its cluster, deleting the cluster when it empties.
    fn detach(&mut self, a: &AssignmentId) -> Option<ClusterId> {
        let mut c = self.cluster_of(a)?;
        c.member_assignment_ids.retain(|m| m != a);
        let id = c.id.clone();
        if c.member_assignment_ids.is_empty() {
            self.delete_cluster(&id);
        } else {
            c.stale_name = true;
            self.put(Entity::Cluster(c));
        }
        Some(id)
    }

    fn attach(&mut self, a: &AssignmentId, to: &ClusterId) -> Result<(), EditError> {
        let mut c = self.cluster(to)?;
        c.member_assignment_ids.push(a.clone());
        c.kind = ClusterKind::Dense;
        c.stale_name = true;
        self.put(Entity::Cluster(c));
        Ok(())
    }

    /// A new cluster holding `members`. One member makes an outlier
    /// singleton named after its own topic.
    fn spawn(
        &mut self,
        members: Vec<AssignmentId>,
        template: Option<&TopicCluster>,
    ) -> Result<ClusterId, EditError> {
        let id = self.next_cluster_id();
        let c = if members.len() == 1 {
            let a = self.assignment(&members[0])?;
            TopicCluster {
                name: a.topic,
                summary: a.phrase,
                ..TopicCluster::unnamed(id.clone(), members, ClusterKind::OutlierSingleton)
            }
        } else {
            let mut c = TopicCluster::unnamed(id.clone(), members, ClusterKind::Dense);
            if let Some(t) = template {
                c.name = t.name.clone();
                c.summary = t.summary.clone();
                c.name_provenance = t.name_provenance;
            }
            c.stale_name = true;
            c
        };
        self.put(Entity::Cluster(c));
        Ok(id)
    }

    fn finish(self, kind: EditKind, target: Target) -> Result<Change, EditError> {
        let mut before = Vec::new();
        let mut after = Vec::new();
        for (key, value) in self.changed {
            let old = self.state.get(&key);
            if old == value {
                continue;
            }
            before.extend(old);
            after.extend(value);
        }
        let change = Change {
            kind,
            target,
            before,
            after,
        };
        if change.is_noop() {
            return Err(EditError::Noop);
        }
        Ok(change)
    }
}

/// Replaces every assignment of `transcript` with `fresh`, dropping the
/// reviews of the old ones and detaching them from their clusters. When the
/// project is clustered, each new live assignment gets its own outlier
/// singleton so the partition stays total.
pub(crate) fn plan_reextraction(
    state: &ProjectState,
    transcript: &TranscriptId,
    fresh: Vec<TopicAssignment>,
) -> Result<Change, EditError> {
    let clustered = !state.clusters.is_empty();
    let mut d = Draft::new(state);
    let old: Vec<AssignmentId> = state
        .assignments
        .values()
        .filter(|a| &a.transcript_id == transcript)
        .map(|a| a.id.clone())
        .collect();
    for id in &old {
        d.detach(id);
        d.changed
            .insert(EntityKey::Assignment { id: id.clone() }, None);
        for r in state.reviews.values().filter(|r| &r.assignment_id == id) {
            d.changed.insert(Entity::Review(r.clone()).key(), None);
        }
    }
    for a in fresh {
        if &a.transcript_id != transcript {
            return Err(EditError::Invalid(format!(
                "assignment {} belongs to transcript {}",
                a.id, a.transcript_id
            )));
        }
        let id = a.id.clone();
        let live = !a.is_rejected();
        d.put(Entity::Assignment(a));
        if clustered && live {
            d.spawn(vec![id], None)?;
        }
    }
    d.finish(
        EditKind::AiExtraction,
        Target::Transcript(transcript.clone()),
    )
}

fn required(value: &str, what: &str) -> Result<String, EditError> {
    let v = text::normalize(value);
    if v.is_empty() {
        Err(EditError::Invalid(format!("{what} must not be empty")))
    } else {
        Ok(v)
    }
}

fn mark_human(a: &mut TopicAssignment) {
    a.status = AssignmentStatus::Edited;
    a.provenance = Provenance::Human;
}

/// Checks `req` against `state` and returns the change it makes. Nothing is
/// applied; callers commit the change through the edit log.
pub fn plan_edit(state: &ProjectState, req: &EditRequest) -> Result<Change, EditError> {
    let mut d = Draft::new(state);
    let (kind, target) = match req {
        EditRequest::RenameTopic {
            assignment_id,
            topic,
        } => {
            let mut a = d.live_assignment(assignment_id)?;
            a.topic = required(topic, "topic")?;
            mark_human(&mut a);
            d.put(Entity::Assignment(a));
            (
                EditKind::RenameTopic,
                Target::Assignment(assignment_id.clone()),
            )
        }
        EditRequest::ReassignRo {
            assignment_id,
            research_objective_id,
        } => {
            let mut a = d.live_assignment(assignment_id)?;
            a.research_objective_id = match_objective(research_objective_id, &state.objectives)
                .ok_or_else(|| {
                    EditError::Invalid(format!(
                        "`{research_objective_id}` is not a configured research objective"
                    ))
                })?;
            mark_human(&mut a);
            d.put(Entity::Assignment(a));
            (
                EditKind::ReassignRo,
                Target::Assignment(assignment_id.clone()),
            )
        }
        EditRequest::RenameCluster { cluster_id, name } => {
            let mut c = d.cluster(cluster_id)?;
            c.name = required(name, "cluster name")?;
            c.name_provenance = Provenance::Human;
            c.stale_name = false;
            d.put(Entity::Cluster(c));
            (EditKind::RenameCluster, Target::Cluster(cluster_id.clone()))
        }
        EditRequest::EditSummary {
            cluster_id,
            summary,
        } => {
            let mut c = d.cluster(cluster_id)?;
            c.summary = text::normalize(summary);
            d.put(Entity::Cluster(c));
            (EditKind::EditSummary, Target::Cluster(cluster_id.clone()))
        }
        EditRequest::MoveAssignment {
            assignment_id,
            to_cluster_id,
        } => {
            d.live_assignment(assignment_id)?;
            let from = d.cluster_of(assignment_id).ok_or_else(|| {
                EditError::Partition(format!("assignment {assignment_id} is not in any cluster"))
            })?;
            match to_cluster_id {
                Some(to) if *to == from.id => return Err(EditError::Noop),
                Some(to) => {
                    d.cluster(to)?;
                    d.detach(assignment_id);
                    d.attach(assignment_id, to)?;
                }
                None => {
                    if from.member_assignment_ids.len() == 1
                        && from.kind == ClusterKind::OutlierSingleton
                    {
                        return Err(EditError::Noop);
                    }
                    d.detach(assignment_id);
                    d.spawn(vec![assignment_id.clone()], None)?;
                }
            }
            (
                EditKind::MoveAssignment,
                Target::Assignment(assignment_id.clone()),
            )
        }
        EditRequest::MergeClusters { cluster_ids } => {
            let mut ids = cluster_ids.clone();
            ids.dedup();
            let mut distinct = ids.clone();
            distinct.sort();
            distinct.dedup();
            if distinct.len() != ids.len() || ids.len() < 2 {
                return Err(EditError::Invalid(
                    "merge needs at least two distinct clusters".into(),
                ));
            }
            let mut into = d.cluster(&ids[0])?;
            for other in &ids[1..] {
                let c = d.cluster(other)?;
                into.member_assignment_ids.extend(c.member_assignment_ids);
                d.delete_cluster(other);
            }
            into.kind = ClusterKind::Dense;
            into.stale_name = true;
            d.put(Entity::Cluster(into));
            (EditKind::MergeClusters, Target::Cluster(ids[0].clone()))
        }
        EditRequest::SplitCluster {
            cluster_id,
            assignment_ids,
        } => {
            let mut c = d.cluster(cluster_id)?;
            let mut moving = assignment_ids.clone();
            moving.sort();
            moving.dedup();
            if moving.is_empty() {
                return Err(EditError::Invalid(
                    "split needs at least one member to move".into(),
                ));
            }
            if let Some(stray) = moving.iter().find(|a| !c.contains(a)) {
                return Err(EditError::Partition(format!(
                    "assignment {stray} is not a member of {cluster_id}"
                )));
            }
            if moving.len() == c.member_assignment_ids.len() {
                return Err(EditError::Partition(
                    "split must leave at least one member behind".into(),
                ));
            }
            let template = c.clone();
            c.member_assignment_ids.retain(|m| !moving.contains(m));
            c.stale_name = true;
            d.put(Entity::Cluster(c));
            let order: Vec<AssignmentId> = template
                .member_assignment_ids
                .iter()
                .filter(|m| moving.contains(m))
                .cloned()
                .collect();
            d.spawn(order, Some(&template))?;
            (EditKind::SplitCluster, Target::Cluster(cluster_id.clone()))
        }
        EditRequest::Reject { assignment_id } => {
            let mut a = d.live_assignment(assignment_id)?;
            a.status = AssignmentStatus::Rejected;
            d.put(Entity::Assignment(a));
            d.detach(assignment_id);
            (EditKind::Reject, Target::Assignment(assignment_id.clone()))
        }
        EditRequest::Restore {
            assignment_id,
            to_cluster_id,
        } => {
            let mut a = d.assignment(assignment_id)?;
            if !a.is_rejected() {
                return Err(EditError::NotRejected(assignment_id.clone()));
            }
            a.status = match a.provenance {
                Provenance::Ai => AssignmentStatus::Proposed,
                Provenance::Human => AssignmentStatus::Edited,
            };
            d.put(Entity::Assignment(a));
            match to_cluster_id {
                Some(to) => d.attach(assignment_id, to)?,
                None if d.any_clusters() => {
                    d.spawn(vec![assignment_id.clone()], None)?;
                }
                None => {}
            }
            (EditKind::Restore, Target::Assignment(assignment_id.clone()))
        }
    };
    d.finish(kind, target)
}
