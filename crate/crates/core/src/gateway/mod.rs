//! Access to text-completion providers.
//!
//! Everything that talks to a model goes through the [`Gateway`] trait:
//! the HTTP client in [`http`], the offline [`ScriptedStub`], and the
//! [`Recorder`] that captures live responses into stub fixtures.

mod http;
mod retry;
mod structured;
mod stub;
mod synthetic;

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::HttpGateway;
pub use retry::{Backoff, RetryPolicy};
pub use structured::{extract_structured_list, RepairFailure, StructuredRecord};
pub use stub::{Recorder, ScriptedStub, StubEntry, StubManifest};
pub use synthetic::SyntheticResponder;

pub const DEFAULT_MODEL_ID: &str = "llama-3-3-70b-instruct";
pub const DEFAULT_CONCURRENCY: usize = 4;

pub const ENV_ENDPOINT: &str = "TAPESTRY_LLM_ENDPOINT";
pub const ENV_MODEL: &str = "TAPESTRY_LLM_MODEL";
pub const ENV_CREDENTIAL_REF: &str = "TAPESTRY_LLM_CREDENTIAL_VAR";
pub const DEFAULT_CREDENTIAL_VAR: &str = "TAPESTRY_LLM_API_KEY";

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum GatewayError {
    #[error("provider unavailable after {attempts} attempts: {last_error}")]
    TimeoutExhausted { attempts: u32, last_error: String },
    #[error("provider rejected credentials (status {status}): {payload}")]
    AuthFailure { status: u16, payload: String },
    #[error("provider rejected request (status {status}): {payload}")]
    MalformedRequest { status: u16, payload: String },
    #[error("no scripted response for prompt digest {digest}")]
    StubMiss { digest: String },
    #[error("unexpected provider response: {payload}")]
    BadResponse { payload: String },
    #[error("invalid completion request: {0}")]
    InvalidRequest(String),
}

impl GatewayError {
    /// Stable machine-readable error class.
    pub fn class(&self) -> &'static str {
        match self {
            GatewayError::TimeoutExhausted { .. } => "timeout_exhausted",
            GatewayError::AuthFailure { .. } => "auth_failure",
            GatewayError::MalformedRequest { .. } => "malformed_request",
            GatewayError::StubMiss { .. } => "stub_miss",
            GatewayError::BadResponse { .. } => "bad_response",
            GatewayError::InvalidRequest(_) => "invalid_request",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub max_output_tokens: u32,
    pub temperature: f64,
    pub model_id: String,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            max_output_tokens: 1024,
            temperature: 0.0,
            model_id: DEFAULT_MODEL_ID.to_string(),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.prompt.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("prompt is empty".into()));
        }
        if self.max_output_tokens == 0 {
            return Err(GatewayError::InvalidRequest(
                "max_output_tokens must be positive".into(),
            ));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest(
                "temperature must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// A text-completion provider.
pub trait Gateway: Send + Sync {
    fn complete(&self, req: &CompletionRequest) -> Result<String, GatewayError>;

    /// Maximum number of requests callers should keep in flight.
    fn concurrency(&self) -> usize {
        DEFAULT_CONCURRENCY
    }

    /// Model used when callers build requests with defaults.
    fn model_id(&self) -> &str {
        DEFAULT_MODEL_ID
    }
}

impl<G: Gateway + ?Sized> Gateway for std::sync::Arc<G> {
    fn complete(&self, req: &CompletionRequest) -> Result<String, GatewayError> {
        (**self).complete(req)
    }

    fn concurrency(&self) -> usize {
        (**self).concurrency()
    }

    fn model_id(&self) -> &str {
        (**self).model_id()
    }
}

/// Convenience for single-prompt calls with default request settings.
pub fn complete_prompt(gateway: &dyn Gateway, prompt: &str) -> Result<String, GatewayError> {
    let mut req = CompletionRequest::new(prompt);
    req.model_id = gateway.model_id().to_string();
    gateway.complete(&req)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub endpoint_url: String,
    /// Name of the environment variable holding the API credential.
    pub credential_ref: String,
    pub model_id: String,
    #[serde(with = "duration_secs")]
    pub timeout: Duration,
    pub max_retries: u32,
    pub concurrency: usize,
}

impl ProviderConfig {
    pub fn new(endpoint_url: impl Into<String>) -> Self {
        Self {
            endpoint_url: endpoint_url.into(),
            credential_ref: DEFAULT_CREDENTIAL_VAR.to_string(),
            model_id: DEFAULT_MODEL_ID.to_string(),
            timeout: Duration::from_secs(60),
            max_retries: 3,
            concurrency: DEFAULT_CONCURRENCY,
        }
    }

    /// Reads provider settings from the environment. `None` when no endpoint
    /// is configured.
    pub fn from_env() -> Option<Self> {
        let endpoint = std::env::var(ENV_ENDPOINT).ok()?;
        let mut cfg = Self::new(endpoint);
        if let Ok(model) = std::env::var(ENV_MODEL) {
            cfg.model_id = model;
        }
        if let Ok(var) = std::env::var(ENV_CREDENTIAL_REF) {
            cfg.credential_ref = var;
        }
        Some(cfg)
    }

    pub fn credential(&self) -> Option<String> {
        std::env::var(&self.credential_ref).ok()
    }
}

mod duration_secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        if !(secs.is_finite() && secs >= 0.0) {
            return Err(serde::de::Error::custom(
                "timeout must be a non-negative number",
            ));
        }
        Ok(Duration::from_secs_f64(secs))
    }
}

/// Counting semaphore bounding concurrent provider requests.
#[derive(Debug)]
pub struct Semaphore {
    available: Mutex<usize>,
    cond: Condvar,
}

impl Semaphore {
    pub fn new(permits: usize) -> Self {
        Self {
            available: Mutex::new(permits.max(1)),
            cond: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().unwrap_or_else(|e| e.into_inner());
        while *n == 0 {
            n = self.cond.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n -= 1;
        Permit { sem: self }
    }
}

pub struct Permit<'a> {
    sem: &'a Semaphore,
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.sem.available.lock().unwrap_or_else(|e| e.into_inner());
        *n += 1;
        self.sem.cond.notify_one();
    }
}

/// Runs `f` over `items` on up to `workers` threads and returns results in
/// input order.
pub fn map_bounded<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    use std::sync::atomic::{AtomicUsize, Ordering};

    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let out = f(i, &items[i]);
                *slots[i].lock().unwrap_or_else(|e| e.into_inner()) = Some(out);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| {
            m.into_inner()
                .unwrap_or_else(|e| e.into_inner())
                .expect("every slot is filled")
        })
        .collect()
}
