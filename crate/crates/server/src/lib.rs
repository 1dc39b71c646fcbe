//! JSON-over-HTTP API for the thematic analysis workflow.
//!
//! Every route lives under `/v1`. Callers authenticate with a bearer token:
//! either one of the configured static tokens, which map to an actor and a
//! role, or a project share link, which grants read-only access to that one
//! project. Error bodies are [`ApiError`]s.
//!
//! Pipeline runs are started with a `POST` that returns the queued run at
//! once; the run executes on the blocking pool and is polled with
//! `GET .../runs/{run_id}`.

mod auth;
mod error;
mod routes;

use std::path::PathBuf;
use std::sync::Arc;

use axum::Router;
use tapestry_core::project::Operation;
use tapestry_core::workflow::Workspace;

pub use auth::{bearer, TokenEntry, TokenTable, SHARE_ACTOR};
pub use error::{ApiError, ApiResult};
pub use routes::{
    ChatRequest, CreateProjectRequest, EditSubmission, ObjectivesRequest, ProjectView,
    UploadRequest,
};

#[derive(Clone)]
pub struct AppState {
    pub workspace: Arc<Workspace>,
    pub tokens: Arc<TokenTable>,
}

/// One documented route and the permission it needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Endpoint {
    pub method: &'static str,
    pub path: &'static str,
    pub operation: Operation,
}

const fn ep(method: &'static str, path: &'static str, operation: Operation) -> Endpoint {
    Endpoint {
        method,
        path,
        operation,
    }
}

/// Every route the API serves.
pub const ENDPOINTS: &[Endpoint] = &[
    ep("GET", "/v1/projects", Operation::ListProjects),
    ep("POST", "/v1/projects", Operation::CreateProject),
    ep("GET", "/v1/projects/{project_id}", Operation::ReadProject),
    ep(
        "GET",
        "/v1/projects/{project_id}/view",
        Operation::ReadProject,
    ),
    ep(
        "POST",
        "/v1/projects/{project_id}/transcripts",
        Operation::UploadTranscript,
    ),
    ep(
        "GET",
        "/v1/projects/{project_id}/transcripts/{transcript_id}",
        Operation::ReadProject,
    ),
    ep(
        "PUT",
        "/v1/projects/{project_id}/objectives",
        Operation::SetObjectives,
    ),
    ep(
        "POST",
        "/v1/projects/{project_id}/runs/extraction",
        Operation::StartExtraction,
    ),
    ep(
        "POST",
        "/v1/projects/{project_id}/runs/clustering",
        Operation::StartClustering,
    ),
    ep("GET", "/v1/projects/{project_id}/runs", Operation::ReadRun),
    ep(
        "GET",
        "/v1/projects/{project_id}/runs/{run_id}",
        Operation::ReadRun,
    ),
    ep(
        "GET",
        "/v1/projects/{project_id}/runs/{run_id}/artifact",
        Operation::ReadRun,
    ),
    ep(
        "GET",
        "/v1/projects/{project_id}/clusters",
        Operation::ReadProject,
    ),
    ep(
        "GET",
        "/v1/projects/{project_id}/clusters/{cluster_id}",
        Operation::ReadProject,
    ),
    ep(
        "GET",
        "/v1/projects/{project_id}/assignments",
        Operation::ReadProject,
    ),
    ep(
        "GET",
        "/v1/projects/{project_id}/assignments/{assignment_id}",
        Operation::ReadProject,
    ),
    ep(
        "GET",
        "/v1/projects/{project_id}/statements/{transcript_id}/{statement_index}",
        Operation::ReadProject,
    ),
    ep(
        "POST",
        "/v1/projects/{project_id}/reviews",
        Operation::SubmitReview,
    ),
    ep(
        "POST",
        "/v1/projects/{project_id}/cluster-reviews",
        Operation::SubmitReview,
    ),
    ep(
        "GET",
        "/v1/projects/{project_id}/reviews/sheet",
        Operation::ReadReports,
    ),
    ep(
        "POST",
        "/v1/projects/{project_id}/reviews/sheet",
        Operation::SubmitReview,
    ),
    ep(
        "POST",
        "/v1/projects/{project_id}/edits",
        Operation::SubmitEdit,
    ),
    ep(
        "GET",
        "/v1/projects/{project_id}/events",
        Operation::ReadProject,
    ),
    ep(
        "GET",
        "/v1/projects/{project_id}/ratings",
        Operation::ReadReports,
    ),
    ep(
        "GET",
        "/v1/projects/{project_id}/acceptance",
        Operation::ReadReports,
    ),
    ep(
        "GET",
        "/v1/projects/{project_id}/tcn-conflicts",
        Operation::ReadReports,
    ),
    ep(
        "GET",
        "/v1/projects/{project_id}/report",
        Operation::ReadReports,
    ),
    ep(
        "GET",
        "/v1/projects/{project_id}/coder-sheet",
        Operation::ReadReports,
    ),
    ep(
        "POST",
        "/v1/projects/{project_id}/agreement",
        Operation::RunAgreement,
    ),
    ep(
        "POST",
        "/v1/projects/{project_id}/shares",
        Operation::CreateShare,
    ),
    ep("POST", "/v1/projects/{project_id}/chat", Operation::Chat),
];

/// Builds the API router. With `static_dir`, files in it are served for
/// every path outside `/v1` (the browser UI).
pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let api = routes::api().with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

/// Serves the API until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, app: Router) -> std::io::Result<()> {
    tracing::info!(addr = ?listener.local_addr().ok(), "listening");
    axum::serve(listener, app).await
}
