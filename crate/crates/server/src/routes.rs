use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tapestry_core::clustering::TopicCluster;
use tapestry_core::extraction::TopicAssignment;
use tapestry_core::ids::{AssignmentId, ClusterId, ProjectId, RunId, TranscriptId};
use tapestry_core::project::{
    render_markdown, Audience, Operation, ProjectMeta, ProjectSettings, ReportOptions, StatementRef,
};
use tapestry_core::review::{ClusterReview, EditRequest, ReviewRecord};
use tapestry_core::transcript::{IngestOptions, InputFormat, ResearchObjective, Transcript};
use tapestry_core::workflow::{
    Actor, AgreementRequest, ClusteringRequest, ExtractionRequest, ProjectService, ServiceError,
    Workspace,
};

use crate::auth::{bearer, project_actor};
use crate::error::{ApiError, ApiResult};
use crate::AppState;

pub fn api() -> Router<AppState> {
    Router::new()
        .route("/v1/projects", get(list_projects).post(create_project))
        .route("/v1/projects/{project_id}", get(project_meta))
        .route("/v1/projects/{project_id}/view", get(project_view))
        .route(
            "/v1/projects/{project_id}/transcripts",
            post(upload_transcript),
        )
        .route(
            "/v1/projects/{project_id}/transcripts/{transcript_id}",
            get(get_transcript),
        )
        .route(
            "/v1/projects/{project_id}/objectives",
            axum::routing::put(set_objectives),
        )
        .route(
            "/v1/projects/{project_id}/runs/extraction",
            post(start_extraction),
        )
        .route(
            "/v1/projects/{project_id}/runs/clustering",
            post(start_clustering),
        )
        .route("/v1/projects/{project_id}/runs", get(list_runs))
        .route("/v1/projects/{project_id}/runs/{run_id}", get(get_run))
        .route(
            "/v1/projects/{project_id}/runs/{run_id}/artifact",
            get(run_artifact),
        )
        .route("/v1/projects/{project_id}/clusters", get(list_clusters))
        .route(
            "/v1/projects/{project_id}/clusters/{cluster_id}",
            get(get_cluster),
        )
        .route(
            "/v1/projects/{project_id}/assignments",
            get(list_assignments),
        )
        .route(
            "/v1/projects/{project_id}/assignments/{assignment_id}",
            get(get_assignment),
        )
        .route(
            "/v1/projects/{project_id}/statements/{transcript_id}/{statement_index}",
            get(get_statement),
        )
        .route("/v1/projects/{project_id}/reviews", post(submit_review))
        .route(
            "/v1/projects/{project_id}/cluster-reviews",
            post(submit_cluster_review),
        )
        .route(
            "/v1/projects/{project_id}/reviews/sheet",
            get(export_sheet).post(import_sheet),
        )
        .route("/v1/projects/{project_id}/edits", post(submit_edit))
        .route("/v1/projects/{project_id}/events", get(list_events))
        .route("/v1/projects/{project_id}/ratings", get(ratings))
        .route("/v1/projects/{project_id}/acceptance", get(acceptance))
        .route(
            "/v1/projects/{project_id}/tcn-conflicts",
            get(tcn_conflicts),
        )
        .route("/v1/projects/{project_id}/report", get(report))
        .route("/v1/projects/{project_id}/coder-sheet", get(coder_sheet))
        .route("/v1/projects/{project_id}/agreement", post(agreement))
        .route("/v1/projects/{project_id}/shares", post(create_share))
        .route("/v1/projects/{project_id}/chat", post(chat))
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ServiceError> {
    serde_json::from_slice(body)
        .map_err(|e| ServiceError::Validation(format!("invalid request body: {e}")))
}

fn utf8(body: &Bytes) -> Result<String, ServiceError> {
    String::from_utf8(body.to_vec())
        .map_err(|_| ServiceError::Validation("request body is not UTF-8".into()))
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> ApiResult<T> + Send + 'static,
) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

impl AppState {
    /// Authenticates, authorizes `op` on `project_id` and runs `f` on the
    /// blocking pool.
    async fn project<T, F>(
        &self,
        headers: &HeaderMap,
        project_id: String,
        op: Operation,
        f: F,
    ) -> ApiResult<T>
    where
        T: Send + 'static,
        F: FnOnce(&Actor, Arc<ProjectService>) -> Result<T, ServiceError> + Send + 'static,
    {
        let token = bearer(headers)
            .ok_or_else(ApiError::unauthenticated)?
            .to_string();
        let ws = self.workspace.clone();
        let tokens = self.tokens.clone();
        blocking(move || {
            let known = tokens.actor(&token);
            let svc = match ws.get(&ProjectId::new(project_id)) {
                Ok(svc) => svc,
                // unknown callers learn nothing about which projects exist
                Err(_) if known.is_none() => return Err(ApiError::unauthenticated()),
                Err(e) => return Err(e.into()),
            };
            let actor =
                project_actor(&tokens, &token, &svc).ok_or_else(ApiError::unauthenticated)?;
            actor.authorize(op)?;
            Ok(f(&actor, svc)?)
        })
        .await
    }

    async fn global<T, F>(&self, headers: &HeaderMap, op: Operation, f: F) -> ApiResult<T>
    where
        T: Send + 'static,
        F: FnOnce(&Actor, &Workspace) -> Result<T, ServiceError> + Send + 'static,
    {
        let token = bearer(headers).ok_or_else(ApiError::unauthenticated)?;
        let actor = self
            .tokens
            .actor(token)
            .ok_or_else(ApiError::unauthenticated)?;
        actor.authorize(op)?;
        let ws = self.workspace.clone();
        blocking(move || Ok(f(&actor, &ws)?)).await
    }
}

fn attachment(content_type: &'static str, filename: String, body: String) -> Response {
    (
        [
            (header::CONTENT_TYPE, content_type.to_string()),
            (
                header::CONTENT_DISPOSITION,
                format!("attachment; filename=\"{filename}\""),
            ),
        ],
        body,
    )
        .into_response()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateProjectRequest {
    pub id: ProjectId,
    pub name: String,
    #[serde(default)]
    pub settings: Option<ProjectSettings>,
}

async fn list_projects(
    State(app): State<AppState>,
    headers: HeaderMap,
) -> ApiResult<Json<Vec<ProjectMeta>>> {
    app.global(&headers, Operation::ListProjects, |actor, ws| {
        ws.list(actor)
    })
    .await
    .map(Json)
}

async fn create_project(
    State(app): State<AppState>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<ProjectMeta>)> {
    app.global(&headers, Operation::CreateProject, move |actor, ws| {
        let req: CreateProjectRequest = parse(&body)?;
        let svc = ws.create(actor, &req.id, &req.name, req.settings.unwrap_or_default())?;
        svc.meta(actor)
    })
    .await
    .map(|m| (StatusCode::CREATED, Json(m)))
}

async fn project_meta(
    State(app): State<AppState>,
    headers: HeaderMap,
    Path(pid): Path<String>,
) -> ApiResult<Json<ProjectMeta>> {
    app.project(&headers, pid, Operation::ReadProject, |a, s| s.meta(a))
        .await
        .map(Json)
}

/// Everything the workspace UI renders, in one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectView {
    pub meta: ProjectMeta,
    pub objectives: Vec<ResearchObjective>,
    pub transcripts: Vec<Transcript>,
    pub assignments: Vec<TopicAssignment>,
    pub clusters: Vec<TopicCluster>,
    pub reviews: Vec<ReviewRecord>,
    pub cluster_reviews: Vec<ClusterReview>,
    /// Edit trail position the view reflects.
    pub version: u64,
    /// Whether the caller may change anything.
    pub read_only: bool,
}

async fn project_view(
    State(app): State<AppState>,
    headers: HeaderMap,
    Path(pid): Path<String>,
) -> ApiResult<Json<ProjectView>> {
    app.project(&headers, pid, Operation::ReadProject, |a, s| {
        let p = s.project(a)?;
        let st = &p.state;
        Ok(ProjectView {
            meta: p.meta.clone(),
            objectives: st.objectives.clone(),
            transcripts: st.transcripts.values().cloned().collect(),
            assignments: st.assignments.values().cloned().collect(),
            clusters: st.clusters.values().cloned().collect(),
            reviews: st.reviews.values().cloned().collect(),
            cluster_reviews: st.cluster_reviews.values().cloned().collect(),
            version: p.version(),
            read_only: !Operation::ALL
                .iter()
                .any(|op| op.is_mutation() && a.role.permits(*op)),
        })
    })
    .await
    .map(Json)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UploadRequest {
    pub content: String,
    #[serde(default = "default_format")]
    pub format: InputFormat,
    #[serde(flatten)]
    pub options: IngestOptions,
}

fn default_format() -> InputFormat {
    InputFormat::Csv
}

async fn upload_transcript(
    State(app): State<AppState>,
    headers: HeaderMap,
    Path(pid): Path<String>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    app.project(&headers, pid, Operation::UploadTranscript, move |a, s| {
        let req: UploadRequest = parse(&body)?;
        let (t, commit) = s.ingest(a, &req.content, req.format, &req.options)?;
        Ok(serde_json::json!({
            "transcript_id": t.id,
            "participant_label": t.participant_label,
            "turns": t.turns.len(),
            "statements": t.turns.iter().filter(|x| x.speaker_role == tapestry_core::transcript::SpeakerRole::Interviewee).count(),
            "commit": commit,
        }))
    })
    .await
    .map(|v| (StatusCode::CREATED, Json(v)))
}

async fn get_transcript(
    State(app): State<AppState>,
    headers: HeaderMap,
    Path((pid, tid)): Path<(String, String)>,
) -> ApiResult<Json<Transcript>> {
    app.project(&headers, pid, Operation::ReadProject, move |a, s| {
        s.transcript(a, &TranscriptId::new(tid))
    })
    .await
    .map(Json)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectivesRequest {
    pub objectives: Vec<ResearchObjective>,
}

async fn set_objectives(
    State(app): State<AppState>,
    headers: HeaderMap,
    Path(pid): Path<String>,
    body: Bytes,
) -> ApiResult<Json<serde_json::Value>> {
    app.project(&headers, pid, Operation::SetObjectives, move |a, s| {
        let req: ObjectivesRequest = parse(&body)?;
        let (objectives, commit) = s.set_objectives(a, &req.objectives)?;
        Ok(serde_json::json!({ "objectives": objectives, "commit": commit }))
    })
    .await
    .map(Json)
}

fn body_or_default<T: DeserializeOwned + Default>(body: &Bytes) -> Result<T, ServiceError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        Ok(T::default())
    } else {
        parse(body)
    }
}

async fn start_extraction(
    State(app): State<AppState>,
    headers: HeaderMap,
    Path(pid): Path<String>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<tapestry_core::project::RunRecord>)> {
    let rt = tokio::runtime::Handle::current();
    app.project(&headers, pid, Operation::StartExtraction, move |a, s| {
        let req: ExtractionRequest = body_or_default(&body)?;
        let run = s.start_extraction(a, &req)?;
        let id = run.id.clone();
        rt.spawn_blocking(move || execute(&s, &id));
        Ok(run)
    })
    .await
    .map(|r| (StatusCode::ACCEPTED, Json(r)))
}

async fn start_clustering(
    State(app): State<AppState>,
    headers: HeaderMap,
    Path(pid): Path<String>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<tapestry_core::project::RunRecord>)> {
    let rt = tokio::runtime::Handle::current();
    app.project(&headers, pid, Operation::StartClustering, move |a, s| {
        let req: ClusteringRequest = body_or_default(&body)?;
        let run = s.start_clustering(a, &req)?;
        let id = run.id.clone();
        rt.spawn_blocking(move || execute(&s, &id));
        Ok(run)
    })
    .await
    .map(|r| (StatusCode::ACCEPTED, Json(r)))
}

fn execute(svc: &ProjectService, id: &RunId) {
    // failures are recorded on the run itself; polling reports them
    if let Err(e) = svc.execute_run(id) {
        tracing::warn!(run = %id, code = e.code(), error = %e, "run failed");
    }
}

async fn list_runs(
    State(app): State<AppState>,
    headers: HeaderMap,
    Path(pid): Path<String>,
) -> ApiResult<Json<Vec<tapestry_core::project::RunRecord>>> {
    app.project(&headers, pid, Operation::ReadRun, |a, s| s.runs(a))
        .await
        .map(Json)
}

async fn get_run(
    State(app): State<AppState>,
    headers: HeaderMap,
    Path((pid, rid)): Path<(String, String)>,
) -> ApiResult<Json<tapestry_core::project::RunRecord>> {
    app.project(&headers, pid, Operation::ReadRun, move |a, s| {
        s.run(a, &RunId::new(rid))
    })
    .await
    .map(Json)
}

async fn run_artifact(
    State(app): State<AppState>,
    headers: HeaderMap,
    Path((pid, rid)): Path<(String, String)>,
) -> ApiResult<Response> {
    let run = app
        .project(&headers, pid, Operation::ReadRun, move |a, s| {
            s.run(a, &RunId::new(rid))
        })
        .await?;
    let body = serde_json::to_string_pretty(&run).map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(attachment(
        "application/json",
        format!("{}.json", run.id),
        body,
    ))
}

async fn list_clusters(
    State(app): State<AppState>,
    headers: HeaderMap,
    Path(pid): Path<String>,
) -> ApiResult<Json<Vec<tapestry_core::workflow::ClusterSummary>>> {
    app.project(&headers, pid, Operation::ReadProject, |a, s| s.clusters(a))
        .await
        .map(Json)
}

async fn get_cluster(
    State(app): State<AppState>,
    headers: HeaderMap,
    Path((pid, cid)): Path<(String, String)>,
) -> ApiResult<Json<tapestry_core::project::BackwardTrace>> {
    app.project(&headers, pid, Operation::ReadProject, move |a, s| {
        s.trace_cluster(a, &ClusterId::new(cid))
    })
    .await
    .map(Json)
}

async fn list_assignments(
    State(app): State<AppState>,
    headers: HeaderMap,
    Path(pid): Path<String>,
) -> ApiResult<Json<Vec<TopicAssignment>>> {
    app.project(&headers, pid, Operation::ReadProject, |a, s| {
        s.assignments(a)
    })
    .await
    .map(Json)
}

async fn get_assignment(
    State(app): State<AppState>,
    headers: HeaderMap,
    Path((pid, aid)): Path<(String, String)>,
) -> ApiResult<Json<tapestry_core::workflow::AssignmentDetail>> {
    app.project(&headers, pid, Operation::ReadProject, move |a, s| {
        s.assignment(a, &AssignmentId::new(aid))
    })
    .await
    .map(Json)
}

async fn get_statement(
    State(app): State<AppState>,
    headers: HeaderMap,
    Path((pid, tid, idx)): Path<(String, String, usize)>,
) -> ApiResult<Json<tapestry_core::project::ForwardTrace>> {
    app.project(&headers, pid, Operation::ReadProject, move |a, s| {
        s.trace_statement(
            a,
            &StatementRef {
                transcript_id: TranscriptId::new(tid),
                statement_index: idx,
            },
        )
    })
    .await
    .map(Json)
}

#[derive(Debug, Clone, Deserialize)]
struct Versioned<T> {
    #[serde(flatten)]
    item: T,
    #[serde(default)]
    expected_version: Option<u64>,
}

async fn submit_review(
    State(app): State<AppState>,
    headers: HeaderMap,
    Path(pid): Path<String>,
    body: Bytes,
) -> ApiResult<Json<tapestry_core::workflow::Commit>> {
    app.project(&headers, pid, Operation::SubmitReview, move |a, s| {
        let req: Versioned<ReviewRecord> = parse(&body)?;
        s.record_review(a, req.item, req.expected_version)
    })
    .await
    .map(Json)
}

async fn submit_cluster_review(
    State(app): State<AppState>,
    headers: HeaderMap,
    Path(pid): Path<String>,
    body: Bytes,
) -> ApiResult<Json<tapestry_core::workflow::Commit>> {
    app.project(&headers, pid, Operation::SubmitReview, move |a, s| {
        let req: Versioned<ClusterReview> = parse(&body)?;
        s.record_cluster_review(a, req.item, req.expected_version)
    })
    .await
    .map(Json)
}

#[derive(Debug, Deserialize)]
struct ReviewerQuery {
    #[serde(default)]
    reviewer: Option<String>,
}

async fn export_sheet(
    State(app): State<AppState>,
    headers: HeaderMap,
    Path(pid): Path<String>,
    Query(q): Query<ReviewerQuery>,
) -> ApiResult<Response> {
    let csv = app
        .project(&headers, pid, Operation::ReadReports, move |a, s| {
            let reviewer = q.reviewer.unwrap_or_else(|| a.id.clone());
            s.review_sheet(a, &reviewer)
        })
        .await?;
    Ok(attachment(
        "text/csv; charset=utf-8",
        "review_sheet.csv".into(),
        csv,
    ))
}

async fn import_sheet(
    State(app): State<AppState>,
    headers: HeaderMap,
    Path(pid): Path<String>,
    Query(q): Query<ReviewerQuery>,
    body: Bytes,
) -> ApiResult<Json<tapestry_core::workflow::ImportSummary>> {
    app.project(&headers, pid, Operation::SubmitReview, move |a, s| {
        let raw = utf8(&body)?;
        s.import_reviews(a, &raw, q.reviewer.as_deref())
    })
    .await
    .map(Json)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EditSubmission {
    pub edit: EditRequest,
    #[serde(default)]
    pub expected_version: Option<u64>,
}

async fn submit_edit(
    State(app): State<AppState>,
    headers: HeaderMap,
    Path(pid): Path<String>,
    body: Bytes,
) -> ApiResult<Json<tapestry_core::workflow::Commit>> {
    app.project(&headers, pid, Operation::SubmitEdit, move |a, s| {
        let req: EditSubmission = parse(&body)?;
        s.submit_edit(a, &req.edit, req.expected_version)
    })
    .await
    .map(Json)
}

#[derive(Debug, Deserialize)]
struct SinceQuery {
    #[serde(default)]
    since: u64,
}

async fn list_events(
    State(app): State<AppState>,
    headers: HeaderMap,
    Path(pid): Path<String>,
    Query(q): Query<SinceQuery>,
) -> ApiResult<Json<Vec<tapestry_core::state::EditEvent>>> {
    app.project(&headers, pid, Operation::ReadProject, move |a, s| {
        s.edit_log(a, q.since)
    })
    .await
    .map(Json)
}

async fn ratings(
    State(app): State<AppState>,
    headers: HeaderMap,
    Path(pid): Path<String>,
) -> ApiResult<Json<tapestry_core::review::RatingDistribution>> {
    app.project(&headers, pid, Operation::ReadReports, |a, s| s.ratings(a))
        .await
        .map(Json)
}

async fn acceptance(
    State(app): State<AppState>,
    headers: HeaderMap,
    Path(pid): Path<String>,
) -> ApiResult<Json<tapestry_core::review::AcceptanceSummary>> {
    app.project(&headers, pid, Operation::ReadReports, |a, s| {
        s.acceptance(a)
    })
    .await
    .map(Json)
}

async fn tcn_conflicts(
    State(app): State<AppState>,
    headers: HeaderMap,
    Path(pid): Path<String>,
) -> ApiResult<Json<Vec<tapestry_core::review::TcnConflict>>> {
    app.project(&headers, pid, Operation::ReadReports, |a, s| {
        s.tcn_conflicts(a)
    })
    .await
    .map(Json)
}

#[derive(Debug, Deserialize)]
struct ReportQuery {
    #[serde(default)]
    audience: Option<Audience>,
    #[serde(default)]
    top_k: Option<usize>,
    #[serde(default)]
    quotes: Option<usize>,
    #[serde(default)]
    format: Option<String>,
}

async fn report(
    State(app): State<AppState>,
    headers: HeaderMap,
    Path(pid): Path<String>,
    Query(q): Query<ReportQuery>,
) -> ApiResult<Response> {
    let markdown = match q.format.as_deref() {
        None | Some("json") => false,
        Some("markdown") => true,
        Some(other) => {
            return Err(ApiError::validation(format!(
                "unknown report format `{other}`"
            )))
        }
    };
    let mut opts = ReportOptions::new(q.audience.unwrap_or(Audience::StakeholderSummary));
    if let Some(k) = q.top_k {
        opts.top_k = k;
    }
    if let Some(n) = q.quotes {
        opts.quotes_per_cluster = n;
    }
    let report = app
        .project(&headers, pid, Operation::ReadReports, move |a, s| {
            s.report(a, &opts)
        })
        .await?;
    if markdown {
        return Ok(attachment(
            "text/markdown; charset=utf-8",
            "report.md".into(),
            render_markdown(&report),
        ));
    }
    Ok(Json(report).into_response())
}

async fn coder_sheet(
    State(app): State<AppState>,
    headers: HeaderMap,
    Path(pid): Path<String>,
) -> ApiResult<Response> {
    let csv = app
        .project(&headers, pid, Operation::ReadReports, |a, s| {
            s.coder_sheet(a)
        })
        .await?;
    Ok(attachment(
        "text/csv; charset=utf-8",
        "coder_sheet.csv".into(),
        csv,
    ))
}

async fn agreement(
    State(app): State<AppState>,
    headers: HeaderMap,
    Path(pid): Path<String>,
    body: Bytes,
) -> ApiResult<Json<tapestry_core::agreement::AgreementReport>> {
    app.project(&headers, pid, Operation::RunAgreement, move |a, s| {
        let req: AgreementRequest = parse(&body)?;
        s.agreement(a, &req)
    })
    .await
    .map(Json)
}

async fn create_share(
    State(app): State<AppState>,
    headers: HeaderMap,
    Path(pid): Path<String>,
) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    app.project(&headers, pid, Operation::CreateShare, |a, s| {
        let (link, commit) = s.create_share(a)?;
        Ok(serde_json::json!({ "token": link.token, "grant": link.grant, "commit": commit }))
    })
    .await
    .map(|v| (StatusCode::CREATED, Json(v)))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatRequest {
    pub question: String,
}

async fn chat(
    State(app): State<AppState>,
    headers: HeaderMap,
    Path(pid): Path<String>,
    body: Bytes,
) -> ApiResult<Json<tapestry_core::chat::ChatAnswer>> {
    app.project(&headers, pid, Operation::Chat, move |a, s| {
        let req: ChatRequest = parse(&body)?;
        s.chat(a, &req.question)
    })
    .await
    .map(Json)
}
