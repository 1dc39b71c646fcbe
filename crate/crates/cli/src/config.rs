use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use tapestry_core::clustering::{
    EmbeddingProvider, HdbscanParams, HttpEmbedder, NgramHashEmbedder,
};
use tapestry_core::gateway::{Gateway, HttpGateway, ProviderConfig, SyntheticResponder};
use tapestry_core::project::ProjectSettings;
use tapestry_server::TokenTable;

/// Contents of the `--config` TOML file. Relative paths are resolved
/// against the file's directory.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    pub project_root: Option<PathBuf>,
    /// Name of the entry in `profiles` used for model calls.
    pub profile: Option<String>,
    #[serde(default)]
    pub profiles: BTreeMap<String, Profile>,
    #[serde(default)]
    pub extraction: ExtractionDefaults,
    #[serde(default)]
    pub hdbscan: Option<HdbscanParams>,
    #[serde(default)]
    pub server: ServerConfig,
    /// Bearer tokens accepted by `serve`.
    #[serde(default)]
    pub tokens: TokenTable,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractionDefaults {
    pub max_topics: Option<usize>,
    pub context_turns: Option<usize>,
    pub failure_threshold: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerConfig {
    pub listen: Option<String>,
    pub data_dir: Option<PathBuf>,
    pub static_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    /// The built-in deterministic offline model.
    Synthetic,
    /// An OpenAI-compatible chat-completions endpoint.
    Http {
        endpoint_url: String,
        model_id: Option<String>,
        /// Environment variable holding the API key.
        credential_env: Option<String>,
        timeout_secs: Option<u64>,
        max_retries: Option<u32>,
        concurrency: Option<usize>,
        /// Embeddings endpoint; the built-in n-gram embedder is used when
        /// absent.
        embedding_url: Option<String>,
        embedding_model: Option<String>,
    },
}

impl CliConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: CliConfig =
            toml::from_str(&raw).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(v) = p.as_mut() {
                if v.is_relative() {
                    *v = base.join(&*v);
                }
            }
        };
        resolve(&mut cfg.project_root);
        resolve(&mut cfg.server.data_dir);
        resolve(&mut cfg.server.static_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if let Some(name) = &self.profile {
            if !self.profiles.contains_key(name) {
                bail!("config selects profile `{name}`, which is not defined under [profiles]");
            }
        }
        Ok(())
    }

    pub fn settings(&self) -> ProjectSettings {
        let mut s = ProjectSettings::default();
        if let Some(t) = self.extraction.max_topics {
            s.max_topics = t;
        }
        if let Some(c) = self.extraction.context_turns {
            s.context_turns = c;
        }
        if let Some(f) = self.extraction.failure_threshold {
            s.failure_threshold = f;
        }
        if let Some(h) = self.hdbscan {
            s.hdbscan = h;
        }
        s
    }

    pub fn selected_profile(&self) -> Option<&Profile> {
        self.profile.as_ref().and_then(|p| self.profiles.get(p))
    }
}

impl Profile {
    pub fn build(&self) -> Result<(Arc<dyn Gateway>, Arc<dyn EmbeddingProvider>)> {
        match self {
            Profile::Synthetic => Ok((
                Arc::new(SyntheticResponder::new()),
                Arc::new(NgramHashEmbedder),
            )),
            Profile::Http {
                endpoint_url,
                model_id,
                credential_env,
                timeout_secs,
                max_retries,
                concurrency,
                embedding_url,
                embedding_model,
            } => {
                let mut cfg = ProviderConfig::new(endpoint_url.clone());
                if let Some(m) = model_id {
                    cfg.model_id = m.clone();
                }
                if let Some(c) = credential_env {
                    cfg.credential_ref = c.clone();
                }
                if let Some(t) = timeout_secs {
                    cfg.timeout = Duration::from_secs(*t);
                }
                if let Some(r) = max_retries {
                    cfg.max_retries = *r;
                }
                if let Some(c) = concurrency {
                    cfg.concurrency = *c;
                }
                let embedder: Arc<dyn EmbeddingProvider> = match embedding_url {
                    Some(url) => {
                        let mut e = ProviderConfig {
                            endpoint_url: url.clone(),
                            ..cfg.clone()
                        };
                        if let Some(m) = embedding_model {
                            e.model_id = m.clone();
                        }
                        Arc::new(HttpEmbedder::new(e)?)
                    }
                    None => Arc::new(NgramHashEmbedder),
                };
                Ok((Arc::new(HttpGateway::new(cfg)?), embedder))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_profiles_and_tokens() {
        let cfg: CliConfig = toml::from_str(
            r#"
            profile = "local"
            [profiles.local]
            kind = "http"
            endpoint_url = "http://localhost:8000/v1/chat/completions"
            concurrency = 2
            [profiles.offline]
            kind = "synthetic"
            [extraction]
            max_topics = 3
            [hdbscan]
            min_cluster_size = 4
            min_samples = 2
            [tokens.abc]
            actor = "sam"
            role = "editor"
            "#,
        )
        .unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.settings().max_topics, 3);
        assert_eq!(cfg.settings().hdbscan.min_cluster_size, 4);
        assert!(cfg.tokens.actor("abc").is_some());
    }

    #[test]
    fn missing_profile_is_rejected() {
        let cfg: CliConfig = toml::from_str("profile = \"nope\"").unwrap();
        assert!(cfg.validate().is_err());
    }
}
