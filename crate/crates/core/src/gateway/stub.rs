use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::io;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{CompletionRequest, Gateway, GatewayError};
use crate::text;

const MANIFEST: &str = "index.json";
const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StubEntry {
    pub digest: String,
    /// First line of the prompt, for humans browsing the fixture.
    pub prompt_head: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StubManifest {
    pub schema_version: u32,
    pub entries: Vec<StubEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub playback: Vec<String>,
}

/// Offline gateway answering from recorded responses keyed by prompt digest.
///
/// Lookups try the digest map first and fall back to the ordered playback
/// list. Every call is logged so tests can assert which prompts were sent.
#[derive(Debug, Default)]
pub struct ScriptedStub {
    responses: BTreeMap<String, String>,
    heads: BTreeMap<String, String>,
    playback: Mutex<VecDeque<String>>,
    calls: Mutex<Vec<String>>,
}

impl ScriptedStub {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers `response` for `prompt`.
    pub fn with_response(mut self, prompt: &str, response: impl Into<String>) -> Self {
        self.insert(prompt, response);
        self
    }

    pub fn with_playback<I, S>(self, responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.playback
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .extend(responses.into_iter().map(Into::into));
        self
    }

    pub fn insert(&mut self, prompt: &str, response: impl Into<String>) {
        let digest = text::digest(prompt);
        self.heads.insert(digest.clone(), prompt_head(prompt));
        self.responses.insert(digest, response.into());
    }

    pub fn insert_digest(&mut self, digest: String, response: String) {
        self.responses.insert(digest, response);
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    /// Digests of every prompt received, in call order.
    pub fn calls(&self) -> Vec<String> {
        self.calls.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn load(dir: &Path) -> io::Result<Self> {
        let manifest: StubManifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST))?)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        let mut stub = Self::new();
        for entry in manifest.entries {
            let body = fs::read_to_string(dir.join(format!("{}.txt", entry.digest)))?;
            stub.heads.insert(entry.digest.clone(), entry.prompt_head);
            stub.responses.insert(entry.digest, body);
        }
        Ok(stub.with_playback(manifest.playback))
    }

    pub fn save(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        let mut entries = Vec::with_capacity(self.responses.len());
        for (digest, body) in &self.responses {
            fs::write(dir.join(format!("{digest}.txt")), body)?;
            entries.push(StubEntry {
                digest: digest.clone(),
                prompt_head: self.heads.get(digest).cloned().unwrap_or_default(),
            });
        }
        let manifest = StubManifest {
            schema_version: MANIFEST_VERSION,
            entries,
            playback: self
                .playback
                .lock()
                .unwrap_or_else(|e| e.into_inner())
                .iter()
                .cloned()
                .collect(),
        };
        let mut json = serde_json::to_vec_pretty(&manifest).map_err(io::Error::other)?;
        json.push(b'\n');
        fs::write(dir.join(MANIFEST), json)
    }
}

fn prompt_head(prompt: &str) -> String {
    let line = prompt.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    line.chars().take(80).collect()
}

impl Gateway for ScriptedStub {
    fn complete(&self, req: &CompletionRequest) -> Result<String, GatewayError> {
        req.validate()?;
        let digest = text::digest(&req.prompt);
        self.calls
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(digest.clone());
        if let Some(r) = self.responses.get(&digest) {
            return Ok(r.clone());
        }
        self.playback
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .pop_front()
            .ok_or(GatewayError::StubMiss { digest })
    }
}

/// Wraps a gateway and remembers every successful response, so a live run
/// can be replayed later through a [`ScriptedStub`].
pub struct Recorder<G> {
    inner: G,
    recorded: Mutex<ScriptedStub>,
}

impl<G: Gateway> Recorder<G> {
    pub fn new(inner: G) -> Self {
        Self {
            inner,
            recorded: Mutex::new(ScriptedStub::new()),
        }
    }

    pub fn save(&self, dir: &Path) -> io::Result<()> {
        self.recorded
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .save(dir)
    }

    /// Saves into `dir`, keeping responses already recorded there.
    pub fn append(&self, dir: &Path) -> io::Result<()> {
        let mut stub = if dir.join(MANIFEST).exists() {
            ScriptedStub::load(dir)?
        } else {
            ScriptedStub::new()
        };
        let rec = self.recorded.lock().unwrap_or_else(|e| e.into_inner());
        stub.responses
            .extend(rec.responses.iter().map(|(k, v)| (k.clone(), v.clone())));
        stub.heads
            .extend(rec.heads.iter().map(|(k, v)| (k.clone(), v.clone())));
        stub.save(dir)
    }

    pub fn into_stub(self) -> ScriptedStub {
        self.recorded
            .into_inner()
            .unwrap_or_else(|e| e.into_inner())
    }
}

impl<G: Gateway> Gateway for Recorder<G> {
    fn complete(&self, req: &CompletionRequest) -> Result<String, GatewayError> {
        let out = self.inner.complete(req)?;
        self.recorded
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(&req.prompt, out.clone());
        Ok(out)
    }

    fn concurrency(&self) -> usize {
        self.inner.concurrency()
    }

    fn model_id(&self) -> &str {
        self.inner.model_id()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_playback() {
        let stub = ScriptedStub::new().with_response("p", "[]");
        assert_eq!(stub.complete(&CompletionRequest::new("p")).unwrap(), "[]");
        let miss = stub.complete(&CompletionRequest::new("q")).unwrap_err();
        assert!(matches!(miss, GatewayError::StubMiss { .. }));
        assert_eq!(stub.calls().len(), 2);
    }

    #[test]
    fn nfc_equivalent_prompts_share_a_response() {
        let stub = ScriptedStub::new().with_response("caf\u{e9}", "ok");
        assert_eq!(
            stub.complete(&CompletionRequest::new("cafe\u{301}"))
                .unwrap(),
            "ok"
        );
    }

    #[test]
    fn ordered_playback_after_digest_miss() {
        let stub = ScriptedStub::new().with_playback(["one", "two"]);
        let r = |p: &str| stub.complete(&CompletionRequest::new(p));
        assert_eq!(r("a").unwrap(), "one");
        assert_eq!(r("b").unwrap(), "two");
        assert!(r("c").is_err());
    }

    #[test]
    fn record_save_load_replay() {
        let live = ScriptedStub::new()
            .with_response("alpha", "A")
            .with_response("beta", "B\nmultiline");
        let rec = Recorder::new(live);
        rec.complete(&CompletionRequest::new("alpha")).unwrap();
        rec.complete(&CompletionRequest::new("beta")).unwrap();
        let dir = tempfile::tempdir().unwrap();
        rec.save(dir.path()).unwrap();
        let replay = ScriptedStub::load(dir.path()).unwrap();
        assert_eq!(replay.len(), 2);
        for _ in 0..2 {
            assert_eq!(
                replay.complete(&CompletionRequest::new("beta")).unwrap(),
                "B\nmultiline"
            );
        }
        let manifest: StubManifest =
            serde_json::from_slice(&fs::read(dir.path().join(MANIFEST)).unwrap()).unwrap();
        assert_eq!(manifest.entries.len(), 2);
        assert!(manifest.entries.iter().any(|e| e.prompt_head == "alpha"));
    }
}
