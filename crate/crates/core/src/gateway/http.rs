use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Value};

use super::retry::{Backoff, RetryPolicy};
use super::{CompletionRequest, Gateway, GatewayError, ProviderConfig, Semaphore};

type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

/// Client for OpenAI-compatible chat-completion endpoints.
///
/// `endpoint_url` is the full URL of the completions route.
pub struct HttpGateway {
    cfg: ProviderConfig,
    retry: RetryPolicy,
    client: reqwest::blocking::Client,
    permits: Semaphore,
    sleeper: Sleeper,
}

impl HttpGateway {
    pub fn new(cfg: ProviderConfig) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
        let retry = RetryPolicy {
            max_retries: cfg.max_retries,
            ..RetryPolicy::default()
        };
        Ok(Self {
            permits: Semaphore::new(cfg.concurrency),
            cfg,
            retry,
            client,
            sleeper: Arc::new(std::thread::sleep),
        })
    }

    pub fn with_retry_policy(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_sleeper(mut self, sleeper: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        self.sleeper = Arc::new(sleeper);
        self
    }

    fn attempt(&self, body: &Value) -> Result<String, Backoff> {
        let mut rb = self.client.post(&self.cfg.endpoint_url).json(body);
        if let Some(key) = self.cfg.credential() {
            rb = rb.bearer_auth(key);
        }
        let resp = rb.send().map_err(|e| Backoff::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        let payload = resp.text().unwrap_or_default();
        match status {
            200..=299 => parse_completion(&payload).map_err(Backoff::Fatal),
            401 | 403 => Err(Backoff::Fatal(GatewayError::AuthFailure {
                status,
                payload,
            })),
            408 | 429 | 500..=599 => Err(Backoff::Transient(format!("status {status}: {payload}"))),
            _ => Err(Backoff::Fatal(GatewayError::MalformedRequest {
                status,
                payload,
            })),
        }
    }
}

fn parse_completion(payload: &str) -> Result<String, GatewayError> {
    let bad = || GatewayError::BadResponse {
        payload: payload.to_string(),
    };
    let v: Value = serde_json::from_str(payload).map_err(|_| bad())?;
    let choice = v.get("choices").and_then(|c| c.get(0)).ok_or_else(bad)?;
    choice
        .pointer("/message/content")
        .or_else(|| choice.get("text"))
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(bad)
}

impl Gateway for HttpGateway {
    fn complete(&self, req: &CompletionRequest) -> Result<String, GatewayError> {
        req.validate()?;
        let body = json!({
            "model": req.model_id,
            "messages": [{"role": "user", "content": req.prompt}],
            "max_tokens": req.max_output_tokens,
            "temperature": req.temperature,
        });
        let _permit = self.permits.acquire();
        self.retry
            .run(self.sleeper.as_ref(), |_| self.attempt(&body))
    }

    fn concurrency(&self) -> usize {
        self.cfg.concurrency
    }

    fn model_id(&self) -> &str {
        &self.cfg.model_id
    }
}
