//! Topic embeddings.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::gateway::{Backoff, GatewayError, ProviderConfig, RetryPolicy};
use crate::text;

pub const NGRAM_DIMENSION: usize = 256;
pub const NGRAM_PROVIDER_ID: &str = "builtin-char-ngram-256-n2-3";

#[derive(Debug, Error, PartialEq)]
pub enum EmbeddingError {
    #[error("no topics to embed")]
    Empty,
    #[error("embedding failed for topics {indices:?}: {message}")]
    Provider {
        indices: Vec<usize>,
        message: String,
    },
    #[error("embedding for topic {index} has dimension {found}, expected {expected}")]
    Dimension {
        index: usize,
        expected: usize,
        found: usize,
    },
}

/// Unit-length embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Normalizes `values` to unit length. Zero or non-finite input has no
    /// direction and is rejected.
    pub fn normalized(mut values: Vec<f64>) -> Option<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return None;
        }
        values.iter_mut().for_each(|v| *v /= norm);
        Some(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn cosine(&self, other: &Self) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = String;

    fn try_from(v: Vec<f64>) -> Result<Self, String> {
        Self::normalized(v).ok_or_else(|| "embedding must be finite and non-zero".into())
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

pub trait EmbeddingProvider: Send + Sync {
    /// Stable identifier recorded with each clustering run.
    fn id(&self) -> String;

    /// One vector per input, in input order. Vectors need not be normalized.
    fn embed(&self, topics: &[String]) -> Result<Vec<Vec<f64>>, EmbeddingError>;
}

/// Embeds and normalizes `topics`, checking the provider honoured the
/// one-vector-per-topic contract.
pub fn embed_topics(
    topics: &[String],
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
    if topics.is_empty() {
        return Err(EmbeddingError::Empty);
    }
    let raw = provider.embed(topics)?;
    if raw.len() != topics.len() {
        let missing = (raw.len().min(topics.len())..topics.len()).collect();
        return Err(EmbeddingError::Provider {
            indices: missing,
            message: format!(
                "provider returned {} vectors for {} topics",
                raw.len(),
                topics.len()
            ),
        });
    }
    let expected = raw[0].len();
    let mut out = Vec::with_capacity(raw.len());
    let mut bad = Vec::new();
    for (index, v) in raw.into_iter().enumerate() {
        if v.len() != expected {
            return Err(EmbeddingError::Dimension {
                index,
                expected,
                found: v.len(),
            });
        }
        match EmbeddingVector::normalized(v) {
            Some(e) => out.push(e),
            None => bad.push(index),
        }
    }
    if !bad.is_empty() {
        return Err(EmbeddingError::Provider {
            indices: bad,
            message: "zero or non-finite vector".into(),
        });
    }
    Ok(out)
}

/// Offline provider: hashed character 2- and 3-gram counts of the folded,
/// space-padded topic.
#[derive(Debug, Clone, Copy, Default)]
pub struct NgramHashEmbedder;

impl NgramHashEmbedder {
    pub fn vector(topic: &str) -> Vec<f64> {
        let padded: Vec<char> = format!(" {} ", text::fold(topic)).chars().collect();
        let mut v = vec![0.0; NGRAM_DIMENSION];
        for n in 2..=3 {
            for gram in padded.windows(n) {
                let s: String = gram.iter().collect();
                v[(fnv1a(s.as_bytes()) % NGRAM_DIMENSION as u64) as usize] += 1.0;
            }
        }
        v
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf29ce484222325u64, |h, b| {
        (h ^ *b as u64).wrapping_mul(0x100000001b3)
    })
}

impl EmbeddingProvider for NgramHashEmbedder {
    fn id(&self) -> String {
        NGRAM_PROVIDER_ID.into()
    }

    fn embed(&self, topics: &[String]) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        Ok(topics.iter().map(|t| Self::vector(t)).collect())
    }
}

/// Client for OpenAI-compatible `/embeddings` endpoints.
pub struct HttpEmbedder {
    cfg: ProviderConfig,
    client: reqwest::blocking::Client,
    retry: RetryPolicy,
}

impl HttpEmbedder {
    pub fn new(cfg: ProviderConfig) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
        let retry = RetryPolicy {
            max_retries: cfg.max_retries,
            ..RetryPolicy::default()
        };
        Ok(Self { cfg, client, retry })
    }

    pub fn with_retry_policy(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn attempt(&self, body: &Value, n: usize) -> Result<Vec<Vec<f64>>, Backoff> {
        let mut rb = self.client.post(&self.cfg.endpoint_url).json(body);
        if let Some(key) = self.cfg.credential() {
            rb = rb.bearer_auth(key);
        }
        let resp = rb.send().map_err(|e| Backoff::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        let payload = resp.text().unwrap_or_default();
        match status {
            200..=299 => parse_embeddings(&payload, n).map_err(Backoff::Fatal),
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

fn parse_embeddings(payload: &str, n: usize) -> Result<Vec<Vec<f64>>, GatewayError> {
    let bad = || GatewayError::BadResponse {
        payload: payload.to_string(),
    };
    let v: Value = serde_json::from_str(payload).map_err(|_| bad())?;
    let data = v.get("data").and_then(Value::as_array).ok_or_else(bad)?;
    let mut out = vec![None; n];
    for (pos, item) in data.iter().enumerate() {
        let index = item
            .get("index")
            .and_then(Value::as_u64)
            .map_or(pos, |i| i as usize);
        let vector: Vec<f64> = item
            .get("embedding")
            .and_then(Value::as_array)
            .ok_or_else(bad)?
            .iter()
            .map(|x| x.as_f64().ok_or_else(bad))
            .collect::<Result<_, _>>()?;
        *out.get_mut(index).ok_or_else(bad)? = Some(vector);
    }
    out.into_iter().map(|v| v.ok_or_else(bad)).collect()
}

impl EmbeddingProvider for HttpEmbedder {
    fn id(&self) -> String {
        format!("http:{}", self.cfg.model_id)
    }

    fn embed(&self, topics: &[String]) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        let body = json!({ "model": self.cfg.model_id, "input": topics });
        self.retry
            .run(&std::thread::sleep, |_| self.attempt(&body, topics.len()))
            .map_err(|e| EmbeddingError::Provider {
                indices: (0..topics.len()).collect(),
                message: e.to_string(),
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn embed(s: &str) -> EmbeddingVector {
        embed_topics(&[s.to_string()], &NgramHashEmbedder)
            .unwrap()
            .remove(0)
    }

    #[test]
    fn related_topics_are_closer() {
        let a = embed("pricing concerns");
        let b = embed("price worries");
        let c = embed("gpu kernels");
        assert!(
            a.cosine(&b) > a.cosine(&c),
            "{} vs {}",
            a.cosine(&b),
            a.cosine(&c)
        );
    }

    #[test]
    fn case_and_spacing_do_not_matter() {
        assert_eq!(embed("Pricing  Concerns"), embed("pricing concerns"));
    }

    #[test]
    fn empty_input_is_rejected() {
        assert_eq!(
            embed_topics(&[], &NgramHashEmbedder),
            Err(EmbeddingError::Empty)
        );
    }

    struct Broken;
    impl EmbeddingProvider for Broken {
        fn id(&self) -> String {
            "broken".into()
        }
        fn embed(&self, topics: &[String]) -> Result<Vec<Vec<f64>>, EmbeddingError> {
            Ok(topics
                .iter()
                .map(|t| {
                    if t == "bad" {
                        vec![0.0, 0.0]
                    } else {
                        vec![1.0, 2.0]
                    }
                })
                .collect())
        }
    }

    #[test]
    fn failed_indices_are_named() {
        let topics: Vec<String> = ["ok", "bad", "ok", "bad"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        match embed_topics(&topics, &Broken) {
            Err(EmbeddingError::Provider { indices, .. }) => assert_eq!(indices, vec![1, 3]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn parses_embedding_payload_by_index() {
        let p = r#"{"data":[{"index":1,"embedding":[0,1]},{"index":0,"embedding":[1,0]}]}"#;
        assert_eq!(
            parse_embeddings(p, 2).unwrap(),
            vec![vec![1.0, 0.0], vec![0.0, 1.0]]
        );
        assert!(parse_embeddings(r#"{"data":[]}"#, 1).is_err());
    }

    #[test]
    fn vector_serde_renormalizes() {
        let v: EmbeddingVector = serde_json::from_str("[3.0, 4.0]").unwrap();
        assert_eq!(v.values(), &[0.6, 0.8]);
        assert!(serde_json::from_str::<EmbeddingVector>("[0.0]").is_err());
    }

    proptest! {
        #[test]
        fn unit_norm_and_deterministic(topics in prop::collection::vec("\\PC{0,30}", 1..8)) {
            let a = embed_topics(&topics, &NgramHashEmbedder).unwrap();
            let b = embed_topics(&topics, &NgramHashEmbedder).unwrap();
            prop_assert_eq!(&a, &b);
            for v in a {
                prop_assert!((v.norm() - 1.0).abs() <= 1e-9);
                prop_assert_eq!(v.dimension(), NGRAM_DIMENSION);
            }
        }
    }
}
