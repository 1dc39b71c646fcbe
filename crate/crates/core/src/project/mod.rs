//! Durable project state, traceability and reports.
//!
//! A [`Project`] is the logical [`ProjectState`] plus the edit log that
//! produced it and the records of every extraction and clustering run.
//! [`store`] persists it as a directory of JSON documents.

mod report;
mod roles;
mod store;
mod trace;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::clustering::{ClusteringRun, HdbscanParams};
use crate::extraction::{
    ExtractionReport, DEFAULT_CONTEXT_TURNS, DEFAULT_FAILURE_THRESHOLD, MAX_TOPICS_CEILING,
};
use crate::ids::{EventId, ProjectId, RunId};
use crate::review::ReviewRecord;
use crate::state::{EditEvent, ProjectState};

pub use report::{
    export_report, render_markdown, Audience, EditTrailEntry, FullCluster, FullMember, FullReport,
    Report, ReportError, ReportOptions, SummaryCluster, SummaryReport,
};
pub use roles::{Operation, Role};
pub use store::{DirStore, MemoryStore, ProjectDir, ProjectStore, StoreError};
pub use trace::{
    backward_links, forward_links, resolve_quote, trace_assignment, trace_backward, trace_forward,
    Anchor, BackwardTrace, ClusterLink, ForwardLink, ForwardTrace, MemberTrace, QuoteAnchor,
    StatementRef, TraceError,
};

/// Version of every document written by the store.
pub const SCHEMA_VERSION: u32 = 1;

/// Per-project defaults for pipeline runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectSettings {
    pub max_topics: usize,
    pub context_turns: usize,
    pub failure_threshold: f64,
    pub hdbscan: HdbscanParams,
}

impl Default for ProjectSettings {
    fn default() -> Self {
        Self {
            max_topics: MAX_TOPICS_CEILING,
            context_turns: DEFAULT_CONTEXT_TURNS,
            failure_threshold: DEFAULT_FAILURE_THRESHOLD,
            hdbscan: HdbscanParams::default(),
        }
    }
}

/// Contents of `project.meta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectMeta {
    pub schema_version: u32,
    pub id: ProjectId,
    pub name: String,
    pub created_at: u64,
    /// Number of committed edit events. Used for optimistic concurrency.
    pub version: u64,
    pub settings: ProjectSettings,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Extraction,
    Clustering,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Queued,
    Running,
    Completed,
    Failed,
}

impl RunStatus {
    pub fn is_finished(self) -> bool {
        matches!(self, RunStatus::Completed | RunStatus::Failed)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunCounts {
    pub transcripts: usize,
    pub statements: usize,
    pub assignments: usize,
    pub clusters: usize,
    pub warnings: usize,
    pub errors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "data", rename_all = "snake_case")]
pub enum RunArtifact {
    Extraction(Vec<ExtractionReport>),
    Clustering(ClusteringRun),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunFailure {
    /// Error class, e.g. `provider_failure` or `validation`.
    pub code: String,
    pub message: String,
}

/// Audit record of one pipeline run, stored under `runs/`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub id: RunId,
    pub kind: RunKind,
    pub status: RunStatus,
    pub requested_by: String,
    pub created_at: u64,
    pub updated_at: u64,
    /// Run inputs as submitted (configuration, parameters, provider ids).
    pub parameters: serde_json::Value,
    pub counts: RunCounts,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<RunFailure>,
    /// Edit events the run committed.
    #[serde(default)]
    pub event_ids: Vec<EventId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact: Option<RunArtifact>,
}

pub fn run_id(seq: usize) -> RunId {
    RunId::new(format!("r{seq:04}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Project {
    pub meta: ProjectMeta,
    pub state: ProjectState,
    pub edit_log: Vec<EditEvent>,
    pub runs: BTreeMap<RunId, RunRecord>,
}

impl Project {
    pub fn new(
        id: ProjectId,
        name: impl Into<String>,
        settings: ProjectSettings,
        created_at: u64,
    ) -> Self {
        Self {
            meta: ProjectMeta {
                schema_version: SCHEMA_VERSION,
                id,
                name: name.into(),
                created_at,
                version: 0,
                settings,
            },
            state: ProjectState::default(),
            edit_log: Vec::new(),
            runs: BTreeMap::new(),
        }
    }

    pub fn version(&self) -> u64 {
        self.meta.version
    }

    pub fn next_run_id(&self) -> RunId {
        run_id(self.runs.len() + 1)
    }

    pub fn has_clustering_run(&self) -> bool {
        self.runs
            .values()
            .any(|r| r.kind == RunKind::Clustering && r.status == RunStatus::Completed)
    }
}

/// Reviews whose assignment is still live. Rejected assignments drop out of
/// every aggregate.
pub fn live_reviews(state: &ProjectState) -> impl Iterator<Item = &ReviewRecord> {
    state.reviews.values().filter(|r| {
        state
            .assignments
            .get(&r.assignment_id)
            .is_some_and(|a| !a.is_rejected())
    })
}
