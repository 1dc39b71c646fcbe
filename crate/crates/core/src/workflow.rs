//! The project service: every read and mutation the CLI and HTTP API
//! perform, with role checks, optimistic concurrency and run bookkeeping.
//!
//! State changes go through one writer at a time. Model calls never run
//! under the writer lock: a pipeline run reads a snapshot, does its work,
//! then plans its changes against whatever state is current at commit time
//! and fails with a conflict if its inputs moved underneath it.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use rand::RngCore;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::agreement::{
    agreement_report, group_topics, load_coder_csv, pair_coders, AgreementError, AgreementReport,
    Method, Population,
};
use crate::chat::{answer_question, ChatAnswer, ChatError, DEFAULT_MAX_EVIDENCE};
use crate::clock::Clock;
use crate::clustering::{
    cluster_assignments, name_clusters, ClusteringError, EmbeddingProvider, HdbscanParams,
    TopicCluster,
};
use crate::extraction::{
    extract_topics, ExtractionConfig, ExtractionError, ExtractionReport, TopicAssignment,
};
use crate::gateway::{Gateway, GatewayError};
use crate::ids::{AssignmentId, ClusterId, EventId, ProjectId, RunId, TranscriptId};
use crate::project::{
    export_report, live_reviews, trace_assignment, trace_backward, trace_forward, Anchor,
    BackwardTrace, DirStore, ForwardTrace, Operation, Project, ProjectMeta, ProjectSettings,
    ProjectStore, Report, ReportError, ReportOptions, Role, RunArtifact, RunCounts, RunFailure,
    RunKind, RunRecord, RunStatus, StatementRef, StoreError, TraceError, SCHEMA_VERSION,
};
use crate::review::{
    acceptance_summary, column_for_field, export_review_table, parse_review_table,
    plan_cluster_review, plan_edit, plan_reextraction, plan_review, rating_distribution,
    tcn_conflicts, AcceptanceSummary, ClusterReview, EditError, EditRequest, RatingDistribution,
    ReviewError, ReviewRecord, RowError, TcnConflict,
};
use crate::state::{
    event_id, Change, EditEvent, EditKind, Entity, ProjectState, ShareGrant, ShareMode, Target,
};
use crate::text;
use crate::transcript::{
    parse_transcript, validate_objectives, IngestError, IngestOptions, InputFormat, RawTable,
    ResearchObjective, Transcript,
};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{0}")]
    Validation(String),
    #[error("{message}")]
    Field { field: String, message: String },
    #[error("review sheet has {} invalid row(s)", .0.len())]
    Rows(Vec<RowError>),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("role {role} may not {operation:?}")]
    Forbidden { role: Role, operation: Operation },
    #[error("model provider failed ({class}): {message}")]
    Provider { class: String, message: String },
    #[error("{0}")]
    Internal(String),
}

impl ServiceError {
    /// Stable error class shared by the HTTP API and the CLI exit status.
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::Validation(_) | ServiceError::Field { .. } | ServiceError::Rows(_) => {
                "validation"
            }
            ServiceError::NotFound(_) => "not_found",
            ServiceError::Conflict(_) => "conflict",
            ServiceError::Forbidden { .. } => "forbidden",
            ServiceError::Provider { .. } => "provider_failure",
            ServiceError::Internal(_) => "internal",
        }
    }

    /// Structured details for API clients; `null` when there are none.
    pub fn detail(&self) -> Value {
        match self {
            ServiceError::Field { field, .. } => json!({ "field": field }),
            ServiceError::Rows(rows) => json!({ "rows": rows }),
            ServiceError::Provider { class, .. } => json!({ "class": class }),
            ServiceError::Forbidden { role, operation } => {
                json!({ "role": role.to_string(), "operation": operation })
            }
            _ => Value::Null,
        }
    }

    fn provider(e: &GatewayError) -> Self {
        ServiceError::Provider {
            class: e.class().to_string(),
            message: e.to_string(),
        }
    }
}

impl From<StoreError> for ServiceError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound(_) => ServiceError::NotFound(e.to_string()),
            StoreError::AlreadyExists(_) | StoreError::Conflict { .. } => {
                ServiceError::Conflict(e.to_string())
            }
            StoreError::InvalidId(_) | StoreError::Integrity(_) => {
                ServiceError::Validation(e.to_string())
            }
            _ => ServiceError::Internal(e.to_string()),
        }
    }
}

impl From<ReviewError> for ServiceError {
    fn from(e: ReviewError) -> Self {
        match &e {
            ReviewError::Field { field, .. } => ServiceError::Field {
                field: field.clone(),
                message: e.to_string(),
            },
            ReviewError::UnknownAssignment(_) | ReviewError::UnknownCluster(_) => {
                ServiceError::NotFound(e.to_string())
            }
            ReviewError::Unchanged => ServiceError::Validation(e.to_string()),
        }
    }
}

impl From<EditError> for ServiceError {
    fn from(e: EditError) -> Self {
        match e {
            EditError::UnknownAssignment(_) | EditError::UnknownCluster(_) => {
                ServiceError::NotFound(e.to_string())
            }
            _ => ServiceError::Validation(e.to_string()),
        }
    }
}

impl From<TraceError> for ServiceError {
    fn from(e: TraceError) -> Self {
        match e {
            TraceError::UnknownTranscript(_)
            | TraceError::UnknownCluster(_)
            | TraceError::UnknownAssignment(_)
            | TraceError::NotAStatement { .. } => ServiceError::NotFound(e.to_string()),
            _ => ServiceError::Validation(e.to_string()),
        }
    }
}

impl From<IngestError> for ServiceError {
    fn from(e: IngestError) -> Self {
        ServiceError::Validation(e.to_string())
    }
}

impl From<ChatError> for ServiceError {
    fn from(e: ChatError) -> Self {
        match &e {
            ChatError::EmptyQuestion => ServiceError::Validation(e.to_string()),
            ChatError::Gateway(g) => ServiceError::provider(g),
            ChatError::Parse { .. } | ChatError::Ungrounded { .. } => ServiceError::Provider {
                class: "ungrounded_answer".into(),
                message: e.to_string(),
            },
        }
    }
}

impl From<AgreementError> for ServiceError {
    fn from(e: AgreementError) -> Self {
        match &e {
            AgreementError::Gateway(g) => ServiceError::provider(g),
            AgreementError::Semantic { .. } => ServiceError::Provider {
                class: "bad_response".into(),
                message: e.to_string(),
            },
            _ => ServiceError::Validation(e.to_string()),
        }
    }
}

impl From<ReportError> for ServiceError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::NoClusteringRun => ServiceError::Conflict(e.to_string()),
            ReportError::Trace(t) => t.into(),
        }
    }
}

fn extraction_failure(e: &ExtractionError) -> ServiceError {
    match e {
        ExtractionError::Config(_) => ServiceError::Validation(e.to_string()),
        ExtractionError::Gateway { source, .. } => ServiceError::provider(source),
        ExtractionError::Parse { .. } => ServiceError::Provider {
            class: "bad_response".into(),
            message: e.to_string(),
        },
        ExtractionError::TooManyFailures { .. } => ServiceError::Provider {
            class: "too_many_failures".into(),
            message: e.to_string(),
        },
    }
}

fn clustering_failure(e: &ClusteringError) -> ServiceError {
    match e {
        ClusteringError::Gateway { source, .. } => ServiceError::provider(source),
        ClusteringError::Embedding(_) => ServiceError::Provider {
            class: "embedding_failure".into(),
            message: e.to_string(),
        },
        ClusteringError::Hdbscan(_) => ServiceError::Validation(e.to_string()),
        _ => ServiceError::Internal(e.to_string()),
    }
}

/// Who is calling and with which role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Actor {
    pub id: String,
    pub role: Role,
}

impl Actor {
    pub fn new(id: impl Into<String>, role: Role) -> Self {
        Self {
            id: id.into(),
            role,
        }
    }

    pub fn lead(id: impl Into<String>) -> Self {
        Self::new(id, Role::Lead)
    }

    pub fn authorize(&self, op: Operation) -> Result<(), ServiceError> {
        if self.role.permits(op) {
            Ok(())
        } else {
            Err(ServiceError::Forbidden {
                role: self.role,
                operation: op,
            })
        }
    }
}

/// Model-backed collaborators shared by every project.
#[derive(Clone)]
pub struct Providers {
    pub gateway: Arc<dyn Gateway>,
    pub embedder: Arc<dyn EmbeddingProvider>,
}

/// Result of a committed mutation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Commit {
    /// Project version after the mutation.
    pub version: u64,
    /// Events appended, empty when nothing changed.
    pub event_ids: Vec<EventId>,
}

/// Pending changes, each already applied to `state` so later planning sees
/// earlier steps.
struct Tx {
    state: ProjectState,
    changes: Vec<Change>,
}

impl Tx {
    fn push(&mut self, c: Change) -> Result<(), ServiceError> {
        if c.is_noop() {
            return Ok(());
        }
        let probe = c.clone().stamp(EventId::new("pending"), "", 0);
        self.state
            .apply(&probe)
            .map_err(|e| ServiceError::Internal(e.to_string()))?;
        self.changes.push(c);
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionRequest {
    /// Transcripts to (re-)extract; empty means all.
    #[serde(default)]
    pub transcript_ids: Vec<TranscriptId>,
    #[serde(default)]
    pub max_topics: Option<usize>,
    #[serde(default)]
    pub context_turns: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusteringRequest {
    #[serde(default)]
    pub min_cluster_size: Option<usize>,
    #[serde(default)]
    pub min_samples: Option<usize>,
}

/// Two coders' files for one population.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoderPopulation {
    pub label: String,
    pub coder_a_csv: String,
    pub coder_b_csv: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgreementRequest {
    pub method: Method,
    pub populations: Vec<CoderPopulation>,
}

/// Outcome of a review sheet import.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImportSummary {
    pub records: usize,
    pub cluster_reviews: usize,
    /// Rows identical to what was already stored.
    pub unchanged: usize,
    pub version: u64,
    pub event_ids: Vec<EventId>,
}

/// A freshly created share link. The token is shown once.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShareLink {
    pub token: String,
    pub grant: ShareGrant,
}

/// One assignment with its evidence anchor, cluster and reviews.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentDetail {
    pub assignment: TopicAssignment,
    pub anchor: Anchor,
    pub cluster_id: Option<ClusterId>,
    pub reviews: Vec<ReviewRecord>,
}

/// A cluster as listed in the cluster index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub cluster: TopicCluster,
    pub frequency: usize,
    /// Distinct participants among the members.
    pub participants: Vec<String>,
}

/// A random 192-bit token, hex encoded.
pub fn new_token() -> String {
    let mut bytes = [0u8; 24];
    rand::rng().fill_bytes(&mut bytes);
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Statement key used in coder files: `<participant>:<statement index>`.
pub fn statement_key(participant_label: &str, statement_index: usize) -> String {
    format!("{participant_label}:{statement_index}")
}

/// One project opened for service.
pub struct ProjectService {
    store: Box<dyn ProjectStore>,
    clock: Arc<dyn Clock>,
    providers: Providers,
    snapshot: RwLock<Arc<Project>>,
    writer: Mutex<()>,
}

impl ProjectService {
    pub fn open(
        store: Box<dyn ProjectStore>,
        clock: Arc<dyn Clock>,
        providers: Providers,
    ) -> Result<Self, ServiceError> {
        let p = store.load()?;
        Ok(Self {
            store,
            clock,
            providers,
            snapshot: RwLock::new(Arc::new(p)),
            writer: Mutex::new(()),
        })
    }

    fn lock_writer(&self) -> MutexGuard<'_, ()> {
        self.writer.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Current committed project. Cheap: shares the snapshot.
    pub fn snapshot(&self) -> Arc<Project> {
        self.snapshot
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .clone()
    }

    fn swap(&self, p: Project) {
        *self.snapshot.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(p);
    }

    /// Re-reads the store, discarding the cached snapshot.
    pub fn reload(&self) -> Result<(), ServiceError> {
        let _w = self.lock_writer();
        self.swap(self.store.load()?);
        Ok(())
    }

    fn check_version(&self, expected: Option<u64>) -> Result<(), ServiceError> {
        let current = self.snapshot().version();
        match expected {
            Some(v) if v != current => Err(ServiceError::Conflict(format!(
                "project is at version {current}, request was based on {v}"
            ))),
            _ => Ok(()),
        }
    }

    fn mutate<T>(
        &self,
        actor: &Actor,
        expected_version: Option<u64>,
        plan: impl FnOnce(&mut Tx) -> Result<T, ServiceError>,
    ) -> Result<(T, Commit), ServiceError> {
        let _w = self.lock_writer();
        self.check_version(expected_version)?;
        let base = self.snapshot();
        let mut tx = Tx {
            state: base.state.clone(),
            changes: Vec::new(),
        };
        let value = plan(&mut tx)?;
        if tx.changes.is_empty() {
            let commit = Commit {
                version: base.version(),
                event_ids: Vec::new(),
            };
            return Ok((value, commit));
        }
        let mut p = (*base).clone();
        let at = self.clock.now_ms();
        let mut ids = Vec::new();
        for change in tx.changes {
            let id = event_id(p.edit_log.len() + 1);
            let event = change.stamp(id.clone(), actor.id.as_str(), at);
            p.state
                .apply(&event)
                .map_err(|e| ServiceError::Internal(e.to_string()))?;
            p.edit_log.push(event);
            ids.push(id);
        }
        p.meta.version = p.edit_log.len() as u64;
        match self.store.save(&p, base.version()) {
            Ok(()) => {}
            Err(e @ StoreError::Conflict { .. }) => {
                // someone else committed; pick up their state for the retry
                if let Ok(fresh) = self.store.load() {
                    self.swap(fresh);
                }
                return Err(e.into());
            }
            Err(e) => return Err(e.into()),
        }
        let commit = Commit {
            version: p.version(),
            event_ids: ids,
        };
        self.swap(p);
        Ok((value, commit))
    }

    fn put_run(&self, run: RunRecord) -> Result<RunRecord, ServiceError> {
        let _w = self.lock_writer();
        self.store.save_run(&run)?;
        let mut p = (*self.snapshot()).clone();
        p.runs.insert(run.id.clone(), run.clone());
        self.swap(p);
        Ok(run)
    }

    // ----- reads -----

    pub fn meta(&self, actor: &Actor) -> Result<ProjectMeta, ServiceError> {
        actor.authorize(Operation::ReadProject)?;
        Ok(self.snapshot().meta.clone())
    }

    pub fn project(&self, actor: &Actor) -> Result<Arc<Project>, ServiceError> {
        actor.authorize(Operation::ReadProject)?;
        Ok(self.snapshot())
    }

    pub fn transcript(&self, actor: &Actor, id: &TranscriptId) -> Result<Transcript, ServiceError> {
        actor.authorize(Operation::ReadProject)?;
        self.snapshot()
            .state
            .transcripts
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("unknown transcript {id}")))
    }

    pub fn assignments(&self, actor: &Actor) -> Result<Vec<TopicAssignment>, ServiceError> {
        actor.authorize(Operation::ReadProject)?;
        Ok(self
            .snapshot()
            .state
            .assignments
            .values()
            .cloned()
            .collect())
    }

    pub fn assignment(
        &self,
        actor: &Actor,
        id: &AssignmentId,
    ) -> Result<AssignmentDetail, ServiceError> {
        actor.authorize(Operation::ReadProject)?;
        let p = self.snapshot();
        let a = p
            .state
            .assignments
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("unknown assignment {id}")))?;
        Ok(AssignmentDetail {
            anchor: trace_assignment(&p.state, id)?,
            cluster_id: p.state.cluster_of(id).map(|c| c.id.clone()),
            reviews: p
                .state
                .reviews
                .values()
                .filter(|r| &r.assignment_id == id)
                .cloned()
                .collect(),
            assignment: a,
        })
    }

    /// Clusters ordered by frequency (largest first), then id.
    pub fn clusters(&self, actor: &Actor) -> Result<Vec<ClusterSummary>, ServiceError> {
        actor.authorize(Operation::ReadProject)?;
        let p = self.snapshot();
        let mut out: Vec<ClusterSummary> = p
            .state
            .clusters
            .values()
            .map(|c| {
                let mut participants: Vec<String> = c
                    .member_assignment_ids
                    .iter()
                    .filter_map(|m| p.state.assignments.get(m))
                    .filter_map(|a| p.state.transcripts.get(&a.transcript_id))
                    .map(|t| t.participant_label.clone())
                    .collect();
                participants.sort();
                participants.dedup();
                ClusterSummary {
                    frequency: c.member_assignment_ids.len(),
                    participants,
                    cluster: c.clone(),
                }
            })
            .collect();
        out.sort_by(|a, b| {
            b.frequency
                .cmp(&a.frequency)
                .then_with(|| a.cluster.id.cmp(&b.cluster.id))
        });
        Ok(out)
    }

    pub fn trace_statement(
        &self,
        actor: &Actor,
        s: &StatementRef,
    ) -> Result<ForwardTrace, ServiceError> {
        actor.authorize(Operation::ReadProject)?;
        Ok(trace_forward(&self.snapshot().state, s)?)
    }

    pub fn trace_cluster(
        &self,
        actor: &Actor,
        id: &ClusterId,
    ) -> Result<BackwardTrace, ServiceError> {
        actor.authorize(Operation::ReadProject)?;
        Ok(trace_backward(&self.snapshot().state, id)?)
    }

    /// Edit events after `since` (a version number), oldest first.
    pub fn edit_log(&self, actor: &Actor, since: u64) -> Result<Vec<EditEvent>, ServiceError> {
        actor.authorize(Operation::ReadProject)?;
        let p = self.snapshot();
        Ok(p.edit_log.iter().skip(since as usize).cloned().collect())
    }

    pub fn runs(&self, actor: &Actor) -> Result<Vec<RunRecord>, ServiceError> {
        actor.authorize(Operation::ReadRun)?;
        Ok(self.snapshot().runs.values().cloned().collect())
    }

    pub fn run(&self, actor: &Actor, id: &RunId) -> Result<RunRecord, ServiceError> {
        actor.authorize(Operation::ReadRun)?;
        self.snapshot()
            .runs
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("unknown run {id}")))
    }

    pub fn report(&self, actor: &Actor, opts: &ReportOptions) -> Result<Report, ServiceError> {
        actor.authorize(Operation::ReadReports)?;
        Ok(export_report(&self.snapshot(), opts)?)
    }

    pub fn acceptance(&self, actor: &Actor) -> Result<AcceptanceSummary, ServiceError> {
        actor.authorize(Operation::ReadReports)?;
        Ok(acceptance_summary(live_reviews(&self.snapshot().state)))
    }

    pub fn ratings(&self, actor: &Actor) -> Result<RatingDistribution, ServiceError> {
        actor.authorize(Operation::ReadReports)?;
        let p = self.snapshot();
        Ok(rating_distribution(
            live_reviews(&p.state),
            p.state.cluster_reviews.values(),
        ))
    }

    pub fn tcn_conflicts(&self, actor: &Actor) -> Result<Vec<TcnConflict>, ServiceError> {
        actor.authorize(Operation::ReadReports)?;
        Ok(tcn_conflicts(&self.snapshot().state))
    }

    pub fn review_sheet(&self, actor: &Actor, reviewer: &str) -> Result<String, ServiceError> {
        actor.authorize(Operation::ReadReports)?;
        let reviewer = text::normalize(reviewer);
        if reviewer.is_empty() {
            return Err(ServiceError::Field {
                field: "reviewer_id".into(),
                message: "reviewer id must not be empty".into(),
            });
        }
        Ok(export_review_table(&self.snapshot().state, &reviewer))
    }

    /// The project's live assignments as a coder file (`statement,topic`),
    /// so the AI coder can be compared with a human coder.
    pub fn coder_sheet(&self, actor: &Actor) -> Result<String, ServiceError> {
        actor.authorize(Operation::ReadReports)?;
        let p = self.snapshot();
        let mut rows: Vec<(String, usize, String)> = p
            .state
            .assignments
            .values()
            .filter(|a| !a.is_rejected())
            .filter_map(|a| {
                let t = p.state.transcripts.get(&a.transcript_id)?;
                Some((
                    t.participant_label.clone(),
                    a.statement_index,
                    a.topic.clone(),
                ))
            })
            .collect();
        rows.sort();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["statement", "topic"])
            .map_err(|e| ServiceError::Internal(e.to_string()))?;
        for (label, idx, topic) in rows {
            w.write_record([statement_key(&label, idx), topic])
                .map_err(|e| ServiceError::Internal(e.to_string()))?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| ServiceError::Internal(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| ServiceError::Internal(e.to_string()))
    }

    pub fn chat(&self, actor: &Actor, question: &str) -> Result<ChatAnswer, ServiceError> {
        actor.authorize(Operation::Chat)?;
        let p = self.snapshot();
        Ok(answer_question(
            &p.state,
            question,
            self.providers.gateway.as_ref(),
            DEFAULT_MAX_EVIDENCE,
        )?)
    }

    pub fn agreement(
        &self,
        actor: &Actor,
        req: &AgreementRequest,
    ) -> Result<AgreementReport, ServiceError> {
        actor.authorize(Operation::RunAgreement)?;
        let populations = req
            .populations
            .iter()
            .map(|p| {
                let a = load_coder_csv(&p.coder_a_csv)?;
                let b = load_coder_csv(&p.coder_b_csv)?;
                Ok(Population {
                    label: p.label.clone(),
                    pairings: pair_coders(&a, &b),
                })
            })
            .collect::<Result<Vec<_>, AgreementError>>()?;
        let gateway: Option<&dyn Gateway> = match req.method {
            Method::Semantic => Some(self.providers.gateway.as_ref()),
            Method::Exact => None,
        };
        Ok(agreement_report(&populations, req.method, gateway)?)
    }

    /// Whether `token` is a live share link for this project.
    pub fn share_grants(&self, token: &str) -> bool {
        let digest = text::hex_digest(token.as_bytes());
        self.snapshot().state.shares.contains_key(&digest)
    }

    // ----- mutations -----

    pub fn ingest(
        &self,
        actor: &Actor,
        raw: &str,
        format: InputFormat,
        opts: &IngestOptions,
    ) -> Result<(Transcript, Commit), ServiceError> {
        actor.authorize(Operation::UploadTranscript)?;
        let table = RawTable::parse(raw, format)?;
        let t = parse_transcript(&table, opts)?;
        self.mutate(actor, None, |tx| {
            if tx.state.transcripts.contains_key(&t.id) {
                return Err(ServiceError::Conflict(format!(
                    "transcript {} is already in the project",
                    t.id
                )));
            }
            tx.push(Change {
                kind: EditKind::IngestTranscript,
                target: Target::Transcript(t.id.clone()),
                before: Vec::new(),
                after: vec![Entity::Transcript(t.clone())],
            })?;
            Ok(t)
        })
    }

    /// Replaces the research objective list. Objectives that assignments
    /// still point at cannot be removed.
    pub fn set_objectives(
        &self,
        actor: &Actor,
        objectives: &[ResearchObjective],
    ) -> Result<(Vec<ResearchObjective>, Commit), ServiceError> {
        actor.authorize(Operation::SetObjectives)?;
        let objectives =
            validate_objectives(objectives).map_err(|e| ServiceError::Validation(e.to_string()))?;
        self.mutate(actor, None, |tx| {
            let mut in_use: BTreeMap<&str, usize> = BTreeMap::new();
            for a in tx.state.assignments.values() {
                if !objectives.iter().any(|o| o.id == a.research_objective_id)
                    && a.research_objective_id != crate::extraction::UNMATCHED
                {
                    *in_use.entry(a.research_objective_id.as_str()).or_default() += 1;
                }
            }
            if let Some((id, n)) = in_use.into_iter().next() {
                return Err(ServiceError::Conflict(format!(
                    "research objective {id} is still used by {n} assignment(s)"
                )));
            }
            let before = if tx.state.objectives.is_empty() {
                Vec::new()
            } else {
                vec![Entity::Objectives(tx.state.objectives.clone())]
            };
            tx.push(Change {
                kind: EditKind::SetObjectives,
                target: Target::Project,
                before,
                after: vec![Entity::Objectives(objectives.clone())],
            })?;
            Ok(objectives)
        })
    }

    pub fn record_review(
        &self,
        actor: &Actor,
        r: ReviewRecord,
        expected_version: Option<u64>,
    ) -> Result<Commit, ServiceError> {
        actor.authorize(Operation::SubmitReview)?;
        self.mutate(actor, expected_version, |tx| {
            match plan_review(&tx.state, r) {
                Ok(c) => tx.push(c),
                Err(ReviewError::Unchanged) => Ok(()),
                Err(e) => Err(e.into()),
            }
        })
        .map(|(_, c)| c)
    }

    pub fn record_cluster_review(
        &self,
        actor: &Actor,
        r: ClusterReview,
        expected_version: Option<u64>,
    ) -> Result<Commit, ServiceError> {
        actor.authorize(Operation::SubmitReview)?;
        self.mutate(actor, expected_version, |tx| {
            match plan_cluster_review(&tx.state, r) {
                Ok(c) => tx.push(c),
                Err(ReviewError::Unchanged) => Ok(()),
                Err(e) => Err(e.into()),
            }
        })
        .map(|(_, c)| c)
    }

    /// Imports a filled-in review sheet. Either every row is stored or none
    /// is; rejected rows are reported with their sheet row numbers.
    pub fn import_reviews(
        &self,
        actor: &Actor,
        raw: &str,
        default_reviewer: Option<&str>,
    ) -> Result<ImportSummary, ServiceError> {
        actor.authorize(Operation::SubmitReview)?;
        let (imported, sheet_errors) = parse_review_table(raw, default_reviewer);
        let (unchanged, commit) = self.mutate(actor, None, |tx| {
            let mut errors = sheet_errors.clone();
            let mut unchanged = 0;
            let mut stage =
                |tx: &mut Tx, row: usize, planned: Result<Change, ReviewError>| match planned {
                    Ok(c) => tx.push(c),
                    Err(ReviewError::Unchanged) => {
                        unchanged += 1;
                        Ok(())
                    }
                    Err(e) => {
                        let column = match &e {
                            ReviewError::Field { field, .. } => column_for_field(field),
                            ReviewError::UnknownCluster(_) => "Cluster ID",
                            _ => "Assignment ID",
                        };
                        errors.push(RowError {
                            row,
                            column: column.to_string(),
                            message: e.to_string(),
                        });
                        Ok(())
                    }
                };
            for (r, row) in imported.records.iter().zip(&imported.record_rows) {
                let planned = plan_review(&tx.state, r.clone());
                stage(tx, *row, planned)?;
            }
            for (r, row) in imported
                .cluster_reviews
                .iter()
                .zip(&imported.cluster_review_rows)
            {
                let planned = plan_cluster_review(&tx.state, r.clone());
                stage(tx, *row, planned)?;
            }
            if !errors.is_empty() {
                errors.sort_by(|a, b| (a.row, &a.column).cmp(&(b.row, &b.column)));
                return Err(ServiceError::Rows(errors));
            }
            Ok(unchanged)
        })?;
        Ok(ImportSummary {
            records: imported.records.len(),
            cluster_reviews: imported.cluster_reviews.len(),
            unchanged,
            version: commit.version,
            event_ids: commit.event_ids,
        })
    }

    pub fn submit_edit(
        &self,
        actor: &Actor,
        req: &EditRequest,
        expected_version: Option<u64>,
    ) -> Result<Commit, ServiceError> {
        actor.authorize(Operation::SubmitEdit)?;
        self.mutate(actor, expected_version, |tx| {
            let change = plan_edit(&tx.state, req)?;
            tx.push(change)
        })
        .map(|(_, c)| c)
    }

    pub fn create_share(&self, actor: &Actor) -> Result<(ShareLink, Commit), ServiceError> {
        actor.authorize(Operation::CreateShare)?;
        let token = new_token();
        let grant = ShareGrant {
            token_digest: text::hex_digest(token.as_bytes()),
            mode: ShareMode::ReadOnly,
            created_at: self.clock.now_ms(),
        };
        let (grant, commit) = self.mutate(actor, None, |tx| {
            tx.push(Change {
                kind: EditKind::CreateShare,
                target: Target::Project,
                before: Vec::new(),
                after: vec![Entity::Share(grant.clone())],
            })?;
            Ok(grant)
        })?;
        Ok((ShareLink { token, grant }, commit))
    }

    // ----- pipeline runs -----

    fn extraction_config(
        &self,
        p: &Project,
        req: &ExtractionRequest,
    ) -> Result<ExtractionConfig, ServiceError> {
        let s = &p.meta.settings;
        let cfg = ExtractionConfig {
            max_topics: req.max_topics.unwrap_or(s.max_topics),
            context_turns: req.context_turns.unwrap_or(s.context_turns),
            research_objectives: p.state.objectives.clone(),
            failure_threshold: s.failure_threshold,
        };
        cfg.validate()
            .map_err(|e| ServiceError::Validation(e.to_string()))?;
        Ok(cfg)
    }

    fn new_run(
        &self,
        actor: &Actor,
        kind: RunKind,
        parameters: Value,
        transcripts: usize,
    ) -> Result<RunRecord, ServiceError> {
        let _w = self.lock_writer();
        let mut p = (*self.snapshot()).clone();
        let now = self.clock.now_ms();
        let run = RunRecord {
            schema_version: SCHEMA_VERSION,
            id: p.next_run_id(),
            kind,
            status: RunStatus::Queued,
            requested_by: actor.id.clone(),
            created_at: now,
            updated_at: now,
            parameters,
            counts: RunCounts {
                transcripts,
                ..RunCounts::default()
            },
            failure: None,
            event_ids: Vec::new(),
            artifact: None,
        };
        self.store.save_run(&run)?;
        p.runs.insert(run.id.clone(), run.clone());
        self.swap(p);
        Ok(run)
    }

    /// Validates the request and records a queued extraction run. Call
    /// [`execute_run`](Self::execute_run) to do the work.
    pub fn start_extraction(
        &self,
        actor: &Actor,
        req: &ExtractionRequest,
    ) -> Result<RunRecord, ServiceError> {
        actor.authorize(Operation::StartExtraction)?;
        let p = self.snapshot();
        let cfg = self.extraction_config(&p, req)?;
        let ids = self.extraction_targets(&p, req)?;
        let parameters = json!({
            "transcript_ids": ids,
            "max_topics": cfg.max_topics,
            "context_turns": cfg.context_turns,
            "failure_threshold": cfg.failure_threshold,
            "research_objectives": cfg.research_objectives,
            "model_id": self.providers.gateway.model_id(),
        });
        self.new_run(actor, RunKind::Extraction, parameters, ids.len())
    }

    fn extraction_targets(
        &self,
        p: &Project,
        req: &ExtractionRequest,
    ) -> Result<Vec<TranscriptId>, ServiceError> {
        if req.transcript_ids.is_empty() {
            if p.state.transcripts.is_empty() {
                return Err(ServiceError::Validation(
                    "project has no transcripts".into(),
                ));
            }
            return Ok(p.state.transcripts.keys().cloned().collect());
        }
        let mut ids = req.transcript_ids.clone();
        ids.sort();
        ids.dedup();
        for id in &ids {
            if !p.state.transcripts.contains_key(id) {
                return Err(ServiceError::NotFound(format!("unknown transcript {id}")));
            }
        }
        Ok(ids)
    }

    pub fn start_clustering(
        &self,
        actor: &Actor,
        req: &ClusteringRequest,
    ) -> Result<RunRecord, ServiceError> {
        actor.authorize(Operation::StartClustering)?;
        let p = self.snapshot();
        let params = self.clustering_params(&p, req)?;
        if !p.state.assignments.values().any(|a| !a.is_rejected()) {
            return Err(ServiceError::Validation(
                "project has no assignments to cluster".into(),
            ));
        }
        let parameters = json!({
            "hdbscan": params,
            "embedding_provider": self.providers.embedder.id(),
            "model_id": self.providers.gateway.model_id(),
        });
        self.new_run(
            actor,
            RunKind::Clustering,
            parameters,
            p.state.transcripts.len(),
        )
    }

    fn clustering_params(
        &self,
        p: &Project,
        req: &ClusteringRequest,
    ) -> Result<HdbscanParams, ServiceError> {
        let mut params = p.meta.settings.hdbscan;
        if let Some(m) = req.min_cluster_size {
            params.min_cluster_size = m;
        }
        if let Some(m) = req.min_samples {
            params.min_samples = m;
        }
        params
            .validate()
            .map_err(|e| ServiceError::Validation(e.to_string()))?;
        Ok(params)
    }

    /// Runs a queued run to completion. Failures are recorded on the run
    /// and also returned.
    pub fn execute_run(&self, id: &RunId) -> Result<RunRecord, ServiceError> {
        let mut run = {
            let _w = self.lock_writer();
            let p = self.snapshot();
            let run = p
                .runs
                .get(id)
                .cloned()
                .ok_or_else(|| ServiceError::NotFound(format!("unknown run {id}")))?;
            if run.status != RunStatus::Queued {
                return Err(ServiceError::Conflict(format!(
                    "run {id} is already {:?}",
                    run.status
                )));
            }
            run
        };
        run.status = RunStatus::Running;
        run.updated_at = self.clock.now_ms();
        let mut run = self.put_run(run)?;
        let actor = Actor::new(run.requested_by.clone(), Role::Lead);
        let outcome = match run.kind {
            RunKind::Extraction => self.run_extraction(&actor, &mut run),
            RunKind::Clustering => self.run_clustering(&actor, &mut run),
        };
        run.updated_at = self.clock.now_ms();
        match &outcome {
            Ok(events) => {
                run.status = RunStatus::Completed;
                run.event_ids = events.clone();
            }
            Err(e) => {
                run.status = RunStatus::Failed;
                run.failure = Some(RunFailure {
                    code: e.code().to_string(),
                    message: e.to_string(),
                });
            }
        }
        let run = self.put_run(run)?;
        match outcome {
            Ok(_) => Ok(run),
            Err(e) => Err(e),
        }
    }

    fn run_extraction(
        &self,
        actor: &Actor,
        run: &mut RunRecord,
    ) -> Result<Vec<EventId>, ServiceError> {
        let p = self.snapshot();
        let req: ExtractionRequest = serde_json::from_value(run.parameters.clone())
            .map_err(|e| ServiceError::Internal(e.to_string()))?;
        let mut cfg = self.extraction_config(&p, &req)?;
        if let Some(ros) = run.parameters.get("research_objectives") {
            cfg.research_objectives = serde_json::from_value(ros.clone())
                .map_err(|e| ServiceError::Internal(e.to_string()))?;
        }
        let ids = self.extraction_targets(&p, &req)?;
        let gateway = self.providers.gateway.as_ref();
        let mut fresh = Vec::new();
        let mut reports: Vec<ExtractionReport> = Vec::new();
        for id in &ids {
            let t = &p.state.transcripts[id];
            match extract_topics(t, &cfg, gateway) {
                Ok(outcome) => {
                    reports.push(outcome.report);
                    fresh.push((id.clone(), outcome.assignments));
                }
                Err(e) => {
                    if let ExtractionError::TooManyFailures { report, .. } = &e {
                        reports.push((**report).clone());
                    }
                    run.counts = extraction_counts(&reports, ids.len());
                    run.artifact = Some(RunArtifact::Extraction(reports));
                    return Err(extraction_failure(&e));
                }
            }
        }
        run.counts = extraction_counts(&reports, ids.len());
        run.artifact = Some(RunArtifact::Extraction(reports));
        let objectives = cfg.research_objectives.clone();
        let (_, commit) = self.mutate(actor, None, |tx| {
            if tx.state.objectives != objectives {
                return Err(ServiceError::Conflict(
                    "research objectives changed while the run was in progress".into(),
                ));
            }
            for (id, assignments) in fresh {
                match plan_reextraction(&tx.state, &id, assignments) {
                    Ok(c) => tx.push(c)?,
                    Err(EditError::Noop) => {}
                    Err(e) => return Err(ServiceError::Internal(e.to_string())),
                }
            }
            Ok(())
        })?;
        Ok(commit.event_ids)
    }

    fn run_clustering(
        &self,
        actor: &Actor,
        run: &mut RunRecord,
    ) -> Result<Vec<EventId>, ServiceError> {
        let p = self.snapshot();
        let params: HdbscanParams = run
            .parameters
            .get("hdbscan")
            .cloned()
            .map(serde_json::from_value)
            .transpose()
            .map_err(|e| ServiceError::Internal(e.to_string()))?
            .unwrap_or(p.meta.settings.hdbscan);
        let assignments: Vec<_> = p.state.assignments.values().cloned().collect();
        let (mut clusters, mut record) =
            cluster_assignments(&assignments, &params, self.providers.embedder.as_ref())
                .map_err(|e| clustering_failure(&e))?;
        let unnamed: Vec<TopicCluster> = clusters.clone();
        let naming = name_clusters(&mut clusters, &assignments, self.providers.gateway.as_ref())
            .map_err(|e| clustering_failure(&e))?;
        record.naming_log = naming.calls;
        record.warnings.extend(naming.warnings);
        run.counts = RunCounts {
            transcripts: p.state.transcripts.len(),
            statements: 0,
            assignments: record.assignment_ids.len(),
            clusters: clusters.len(),
            warnings: record.warnings.len(),
            errors: 0,
        };
        let inputs: Vec<(AssignmentId, String)> = record
            .assignment_ids
            .iter()
            .cloned()
            .zip(record.topics.iter().cloned())
            .collect();
        run.artifact = Some(RunArtifact::Clustering(record));
        let (_, commit) = self.mutate(actor, None, |tx| {
            let live: Vec<(AssignmentId, String)> = tx
                .state
                .assignments
                .values()
                .filter(|a| !a.is_rejected())
                .map(|a| (a.id.clone(), a.topic.clone()))
                .collect();
            if live != inputs {
                return Err(ServiceError::Conflict(
                    "assignments changed while clustering was in progress; start a new run".into(),
                ));
            }
            let mut before: Vec<Entity> = tx
                .state
                .clusters
                .values()
                .cloned()
                .map(Entity::Cluster)
                .collect();
            before.extend(
                tx.state
                    .cluster_reviews
                    .values()
                    .cloned()
                    .map(Entity::ClusterReview),
            );
            tx.push(Change {
                kind: EditKind::AiClustering,
                target: Target::Project,
                before,
                after: unnamed.iter().cloned().map(Entity::Cluster).collect(),
            })?;
            tx.push(Change {
                kind: EditKind::AiNaming,
                target: Target::Project,
                before: unnamed.iter().cloned().map(Entity::Cluster).collect(),
                after: clusters.iter().cloned().map(Entity::Cluster).collect(),
            })
        })?;
        Ok(commit.event_ids)
    }

    /// Queues and executes an extraction run in one call.
    pub fn extract(
        &self,
        actor: &Actor,
        req: &ExtractionRequest,
    ) -> Result<RunRecord, ServiceError> {
        let run = self.start_extraction(actor, req)?;
        self.execute_run(&run.id)
    }

    /// Queues and executes a clustering run in one call.
    pub fn cluster(
        &self,
        actor: &Actor,
        req: &ClusteringRequest,
    ) -> Result<RunRecord, ServiceError> {
        let run = self.start_clustering(actor, req)?;
        self.execute_run(&run.id)
    }
}

fn extraction_counts(reports: &[ExtractionReport], transcripts: usize) -> RunCounts {
    RunCounts {
        transcripts,
        statements: reports.iter().map(|r| r.statements).sum(),
        assignments: reports.iter().map(|r| r.assignments).sum(),
        clusters: 0,
        warnings: reports.iter().map(|r| r.warnings.len()).sum(),
        errors: reports.iter().map(|r| r.errors.len()).sum(),
    }
}

/// All projects under one data directory, opened lazily and cached.
pub struct Workspace {
    store: DirStore,
    clock: Arc<dyn Clock>,
    providers: Providers,
    open: Mutex<BTreeMap<ProjectId, Arc<ProjectService>>>,
}

impl Workspace {
    pub fn new(store: DirStore, clock: Arc<dyn Clock>, providers: Providers) -> Self {
        Self {
            store,
            clock,
            providers,
            open: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn providers(&self) -> &Providers {
        &self.providers
    }

    pub fn create(
        &self,
        actor: &Actor,
        id: &ProjectId,
        name: &str,
        settings: ProjectSettings,
    ) -> Result<Arc<ProjectService>, ServiceError> {
        actor.authorize(Operation::CreateProject)?;
        let name = text::normalize(name);
        if name.is_empty() {
            return Err(ServiceError::Field {
                field: "name".into(),
                message: "project name must not be empty".into(),
            });
        }
        let p = Project::new(id.clone(), name, settings, self.clock.now_ms());
        self.store.create(&p)?;
        self.get(id)
    }

    /// Opens a project without a role check; callers authorize per call.
    pub fn get(&self, id: &ProjectId) -> Result<Arc<ProjectService>, ServiceError> {
        let mut open = self.open.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(s) = open.get(id) {
            return Ok(s.clone());
        }
        let dir = self.store.open(id)?;
        let svc = Arc::new(ProjectService::open(
            Box::new(dir),
            self.clock.clone(),
            self.providers.clone(),
        )?);
        open.insert(id.clone(), svc.clone());
        Ok(svc)
    }

    pub fn list(&self, actor: &Actor) -> Result<Vec<ProjectMeta>, ServiceError> {
        actor.authorize(Operation::ListProjects)?;
        Ok(self.store.list()?)
    }
}

/// Groups the project's assignments by statement key for agreement runs.
pub fn project_topics(state: &ProjectState) -> BTreeMap<String, Vec<String>> {
    group_topics(
        state
            .assignments
            .values()
            .filter(|a| !a.is_rejected())
            .filter_map(|a| {
                let t = state.transcripts.get(&a.transcript_id)?;
                Some((
                    statement_key(&t.participant_label, a.statement_index),
                    a.topic.as_str(),
                ))
            }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::FixedClock;
    use crate::clustering::NgramHashEmbedder;
    use crate::gateway::SyntheticResponder;
    use crate::project::MemoryStore;
    use crate::transcript::ColumnMap;

    fn service() -> ProjectService {
        let p = Project::new("demo".into(), "Demo", ProjectSettings::default(), 1);
        ProjectService::open(
            Box::new(MemoryStore::new(p)),
            Arc::new(FixedClock(1_000)),
            Providers {
                gateway: Arc::new(SyntheticResponder),
                embedder: Arc::new(NgramHashEmbedder),
            },
        )
        .unwrap()
    }

    fn opts(label: &str) -> IngestOptions {
        IngestOptions {
            mapping: ColumnMap {
                speaker: "speaker".into(),
                text: "text".into(),
                timestamp: None,
                interviewee: "P".into(),
            },
            participant_label: label.into(),
            source_name: None,
        }
    }

    const CSV: &str = "speaker,text\n\
        I,How did the first week go?\n\
        P,The pricing page confused me and the price felt too high for a small team.\n\
        I,And setup?\n\
        P,Onboarding took two days because the setup guide skipped the login step.\n\
        I,Anything else?\n\
        P,The documentation is thin and the examples in the docs are outdated.\n";

    fn seeded() -> (ProjectService, Actor) {
        let s = service();
        let lead = Actor::lead("lead");
        s.set_objectives(
            &lead,
            &[
                ResearchObjective::new("RO1", "Understand pricing perception"),
                ResearchObjective::new("RO2", "Understand onboarding friction"),
                ResearchObjective::new("RO3", "Understand documentation needs"),
                ResearchObjective::new("RO4", "Understand performance expectations"),
            ],
        )
        .unwrap();
        s.ingest(&lead, CSV, InputFormat::Csv, &opts("P1")).unwrap();
        (s, lead)
    }

    #[test]
    fn duplicate_ingest_conflicts() {
        let (s, lead) = seeded();
        let err = s
            .ingest(&lead, CSV, InputFormat::Csv, &opts("P1"))
            .unwrap_err();
        assert_eq!(err.code(), "conflict");
        assert_eq!(s.snapshot().version(), 2);
    }

    #[test]
    fn import_reports_sheet_and_state_errors_together() {
        let (s, lead) = seeded();
        s.extract(&lead, &ExtractionRequest::default()).unwrap();
        s.cluster(&lead, &ClusteringRequest::default()).unwrap();
        let sheet = s.review_sheet(&lead, "r1").unwrap();
        let mut rdr = csv::Reader::from_reader(sheet.as_bytes());
        let headers = rdr.headers().unwrap().clone();
        let col = |n: &str| headers.iter().position(|h| h == n).unwrap();
        let mut rows: Vec<Vec<String>> = rdr
            .records()
            .map(|r| r.unwrap().iter().map(String::from).collect())
            .collect();
        assert!(rows.len() >= 2);
        for r in rows.iter_mut() {
            for c in ["Q1", "Q2", "Q3"] {
                r[col(c)] = "4".into();
            }
            r[col("Accept AI Analysis? (Yes/No)")] = "Yes".into();
        }
        rows[0][col("Q1")] = "9".into();
        rows[1][col("Assignment ID")] = "missing".into();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&headers).unwrap();
        for r in &rows {
            w.write_record(r).unwrap();
        }
        let raw = String::from_utf8(w.into_inner().unwrap()).unwrap();
        let before = s.snapshot().version();
        let Err(ServiceError::Rows(errors)) = s.import_reviews(&lead, &raw, None) else {
            panic!("sheet with bad rows was accepted");
        };
        let got: Vec<(usize, &str)> = errors.iter().map(|e| (e.row, e.column.as_str())).collect();
        assert_eq!(got, vec![(2, "Q1"), (3, "Assignment ID")]);
        assert_eq!(s.snapshot().version(), before);
    }

    #[test]
    fn pipeline_commits_replayable_events() {
        let (s, lead) = seeded();
        let run = s.extract(&lead, &ExtractionRequest::default()).unwrap();
        assert_eq!(run.status, RunStatus::Completed);
        assert_eq!(run.event_ids.len(), 1);
        let run = s.cluster(&lead, &ClusteringRequest::default()).unwrap();
        assert_eq!(run.event_ids.len(), 2);
        let p = s.snapshot();
        assert!(!p.state.clusters.is_empty());
        assert_eq!(ProjectState::replay(&p.edit_log).unwrap(), p.state);
        p.state.check_integrity().unwrap();
    }

    #[test]
    fn reextraction_keeps_partition_total() {
        let (s, lead) = seeded();
        s.extract(&lead, &ExtractionRequest::default()).unwrap();
        s.cluster(&lead, &ClusteringRequest::default()).unwrap();
        let aid = s
            .snapshot()
            .state
            .assignments
            .keys()
            .next()
            .unwrap()
            .clone();
        s.record_review(
            &lead,
            ReviewRecord {
                reviewer_id: "r1".into(),
                assignment_id: aid,
                q1_topic_match: 4,
                q2_ro_match: 4,
                q3_topic_tcn_match: 4,
                accept_ai: true,
                revised_topic: None,
                revised_ro: None,
                revised_tcn: None,
            },
            None,
        )
        .unwrap();
        let run = s
            .extract(
                &lead,
                &ExtractionRequest {
                    max_topics: Some(1),
                    ..Default::default()
                },
            )
            .unwrap();
        assert_eq!(run.status, RunStatus::Completed);
        let p = s.snapshot();
        p.state.check_integrity().unwrap();
        assert!(p.state.reviews.is_empty());
    }

    #[test]
    fn stale_version_is_a_conflict() {
        let (s, lead) = seeded();
        s.extract(&lead, &ExtractionRequest::default()).unwrap();
        s.cluster(&lead, &ClusteringRequest::default()).unwrap();
        let cid = s.snapshot().state.clusters.keys().next().unwrap().clone();
        let v = s.snapshot().version();
        let rename = |name: &str| EditRequest::RenameCluster {
            cluster_id: cid.clone(),
            name: name.into(),
        };
        s.submit_edit(&lead, &rename("First"), Some(v)).unwrap();
        let err = s
            .submit_edit(&lead, &rename("Second"), Some(v))
            .unwrap_err();
        assert_eq!(err.code(), "conflict");
    }

    #[test]
    fn roles_are_enforced() {
        let (s, _) = seeded();
        let viewer = Actor::new("v", Role::ReadOnly);
        let err = s
            .start_extraction(&viewer, &ExtractionRequest::default())
            .unwrap_err();
        assert_eq!(err.code(), "forbidden");
        assert!(s.meta(&viewer).is_ok());
        let commenter = Actor::new("c", Role::Commenter);
        assert_eq!(s.create_share(&commenter).unwrap_err().code(), "forbidden");
    }

    #[test]
    fn share_tokens_are_stored_as_digests() {
        let (s, lead) = seeded();
        let (link, _) = s.create_share(&lead).unwrap();
        assert!(s.share_grants(&link.token));
        assert!(!s.share_grants("nope"));
        let dump = serde_json::to_string(&*s.snapshot()).unwrap();
        assert!(!dump.contains(&link.token));
    }

    #[test]
    fn objectives_in_use_cannot_be_dropped() {
        let (s, lead) = seeded();
        s.extract(&lead, &ExtractionRequest::default()).unwrap();
        let err = s
            .set_objectives(&lead, &[ResearchObjective::new("RO9", "Something else")])
            .unwrap_err();
        assert_eq!(err.code(), "conflict");
    }

    #[test]
    fn failed_run_is_recorded() {
        let p = Project::new("demo".into(), "Demo", ProjectSettings::default(), 1);
        let s = ProjectService::open(
            Box::new(MemoryStore::new(p)),
            Arc::new(FixedClock(5)),
            Providers {
                gateway: Arc::new(crate::gateway::ScriptedStub::new()),
                embedder: Arc::new(NgramHashEmbedder),
            },
        )
        .unwrap();
        let lead = Actor::lead("lead");
        s.set_objectives(&lead, &[ResearchObjective::new("RO1", "Pricing")])
            .unwrap();
        s.ingest(&lead, CSV, InputFormat::Csv, &opts("P1")).unwrap();
        let run = s
            .start_extraction(&lead, &ExtractionRequest::default())
            .unwrap();
        let err = s.execute_run(&run.id).unwrap_err();
        assert_eq!(err.code(), "provider_failure");
        let stored = s.run(&lead, &run.id).unwrap();
        assert_eq!(stored.status, RunStatus::Failed);
        assert_eq!(stored.failure.unwrap().code, "provider_failure");
        assert_eq!(s.snapshot().version(), 2);
    }
}
