use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Project, ProjectMeta, RunRecord, SCHEMA_VERSION};
use crate::clustering::TopicCluster;
use crate::extraction::TopicAssignment;
use crate::ids::{ProjectId, RunId};
use crate::review::{ClusterReview, ReviewRecord};
use crate::state::{EditEvent, IntegrityError, ProjectState, ShareGrant};
use crate::transcript::{ResearchObjective, Transcript};

const META: &str = "project.meta";
const TRANSCRIPTS: &str = "transcripts";
const ASSIGNMENTS: &str = "analysis/assignments.json";
const CLUSTERS: &str = "analysis/clusters.json";
const REVIEWS: &str = "reviews/assignment_reviews.json";
const CLUSTER_REVIEWS: &str = "reviews/cluster_reviews.json";
const SHARES: &str = "shares.json";
const EDIT_LOG: &str = "edit.log";
const RUNS: &str = "runs";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("project {0} not found")]
    NotFound(String),
    #[error("project {0} already exists")]
    AlreadyExists(String),
    #[error("invalid project id `{0}`: use letters, digits, `-` or `_`")]
    InvalidId(String),
    #[error("version conflict: expected {expected}, store has {found}")]
    Conflict { expected: u64, found: u64 },
    #[error("refusing to save: {0}")]
    Integrity(#[from] IntegrityError),
    #[error("{path}: {message}")]
    Corrupt { path: String, message: String },
    #[error("{path}: schema version {found} is newer than supported {supported}")]
    UnsupportedSchema {
        path: String,
        found: u32,
        supported: u32,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

impl StoreError {
    fn io(path: &Path, source: io::Error) -> Self {
        StoreError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    fn corrupt(path: &Path, message: impl ToString) -> Self {
        StoreError::Corrupt {
            path: path.display().to_string(),
            message: message.to_string(),
        }
    }
}

/// Persistence behind the project service. [`ProjectDir`] is the on-disk
/// implementation; [`MemoryStore`] serves tests and throwaway sessions.
pub trait ProjectStore: Send + Sync {
    fn load(&self) -> Result<Project, StoreError>;

    /// Commits `p`, provided the stored version still equals
    /// `expected_version`. Refuses states that fail the integrity check.
    fn save(&self, p: &Project, expected_version: u64) -> Result<(), StoreError>;

    /// Writes one run record. Runs are audit artifacts and are not versioned
    /// with the state.
    fn save_run(&self, run: &RunRecord) -> Result<(), StoreError>;
}

fn check_commit(p: &Project, expected_version: u64, found: u64) -> Result<(), StoreError> {
    if found != expected_version {
        return Err(StoreError::Conflict {
            expected: expected_version,
            found,
        });
    }
    if p.meta.version != p.edit_log.len() as u64 {
        return Err(StoreError::Corrupt {
            path: META.into(),
            message: format!(
                "version {} does not match {} logged events",
                p.meta.version,
                p.edit_log.len()
            ),
        });
    }
    p.state.check_integrity()?;
    Ok(())
}

#[derive(Debug, Default)]
pub struct MemoryStore {
    inner: Mutex<Option<Project>>,
}

impl MemoryStore {
    pub fn new(p: Project) -> Self {
        Self {
            inner: Mutex::new(Some(p)),
        }
    }
}

impl ProjectStore for MemoryStore {
    fn load(&self) -> Result<Project, StoreError> {
        self.inner
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .clone()
            .ok_or_else(|| StoreError::NotFound("memory".into()))
    }

    fn save(&self, p: &Project, expected_version: u64) -> Result<(), StoreError> {
        let mut slot = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        let found = slot.as_ref().map_or(0, |s| s.meta.version);
        check_commit(p, expected_version, found)?;
        let runs = slot.as_ref().map(|s| s.runs.clone()).unwrap_or_default();
        *slot = Some(Project { runs, ..p.clone() });
        Ok(())
    }

    fn save_run(&self, run: &RunRecord) -> Result<(), StoreError> {
        let mut slot = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        let p = slot
            .as_mut()
            .ok_or_else(|| StoreError::NotFound("memory".into()))?;
        p.runs.insert(run.id.clone(), run.clone());
        Ok(())
    }
}

/// Envelope that stamps every stored document with its schema version.
#[derive(Serialize, Deserialize)]
struct Doc<T> {
    schema_version: u32,
    items: T,
}

/// One project directory:
///
/// ```text
/// project.meta                     id, name, version, settings
/// objectives.json
/// shares.json                      share token digests
/// transcripts/<id>.json
/// analysis/assignments.json
/// analysis/clusters.json
/// reviews/assignment_reviews.json
/// reviews/cluster_reviews.json
/// edit.log                         one JSON event per line, append-only
/// runs/<run id>.json
/// ```
///
/// Documents are pretty-printed JSON with stable key order, so equal states
/// produce byte-identical files. Every file is replaced atomically.
#[derive(Debug, Clone)]
pub struct ProjectDir {
    root: PathBuf,
}

impl ProjectDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn exists(&self) -> bool {
        self.root.join(META).is_file()
    }

    /// Writes a fresh, empty project. Fails if one already exists here.
    pub fn create(&self, p: &Project) -> Result<(), StoreError> {
        if self.exists() {
            return Err(StoreError::AlreadyExists(self.root.display().to_string()));
        }
        for dir in [TRANSCRIPTS, "analysis", "reviews", RUNS] {
            let d = self.root.join(dir);
            fs::create_dir_all(&d).map_err(|e| StoreError::io(&d, e))?;
        }
        let log = self.root.join(EDIT_LOG);
        File::create(&log).map_err(|e| StoreError::io(&log, e))?;
        self.write_documents(p, 0)
    }

    pub fn read_meta(&self) -> Result<ProjectMeta, StoreError> {
        let path = self.root.join(META);
        if !path.is_file() {
            return Err(StoreError::NotFound(self.root.display().to_string()));
        }
        let meta: ProjectMeta = read_json(&path)?;
        if meta.schema_version > SCHEMA_VERSION {
            return Err(StoreError::UnsupportedSchema {
                path: path.display().to_string(),
                found: meta.schema_version,
                supported: SCHEMA_VERSION,
            });
        }
        Ok(meta)
    }

    fn read_doc<T: DeserializeOwned + Default>(&self, rel: &str) -> Result<T, StoreError> {
        let path = self.root.join(rel);
        if !path.exists() {
            return Ok(T::default());
        }
        let doc: Doc<T> = read_json(&path)?;
        if doc.schema_version > SCHEMA_VERSION {
            return Err(StoreError::UnsupportedSchema {
                path: path.display().to_string(),
                found: doc.schema_version,
                supported: SCHEMA_VERSION,
            });
        }
        Ok(doc.items)
    }

    fn write_doc<T: Serialize>(&self, rel: &str, items: T) -> Result<(), StoreError> {
        write_json(
            &self.root.join(rel),
            &Doc {
                schema_version: SCHEMA_VERSION,
                items,
            },
        )
    }

    fn read_log(&self) -> Result<Vec<EditEvent>, StoreError> {
        let path = self.root.join(EDIT_LOG);
        let file = match File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(StoreError::io(&path, e)),
        };
        let mut events = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| StoreError::io(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let event = serde_json::from_str(&line)
                .map_err(|e| StoreError::corrupt(&path, format!("line {}: {e}", n + 1)))?;
            events.push(event);
        }
        Ok(events)
    }

    fn read_runs(&self) -> Result<BTreeMap<RunId, RunRecord>, StoreError> {
        let dir = self.root.join(RUNS);
        let mut runs = BTreeMap::new();
        let entries = match fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(runs),
            Err(e) => return Err(StoreError::io(&dir, e)),
        };
        for entry in entries {
            let path = entry.map_err(|e| StoreError::io(&dir, e))?.path();
            if path.extension().is_some_and(|x| x == "json") {
                let run: RunRecord = read_json(&path)?;
                runs.insert(run.id.clone(), run);
            }
        }
        Ok(runs)
    }

    fn write_documents(&self, p: &Project, logged: usize) -> Result<(), StoreError> {
        let s = &p.state;
        let tdir = self.root.join(TRANSCRIPTS);
        fs::create_dir_all(&tdir).map_err(|e| StoreError::io(&tdir, e))?;
        for t in s.transcripts.values() {
            self.write_doc(&format!("{TRANSCRIPTS}/{}.json", t.id), t)?;
        }
        // transcripts are never deleted by edits, but keep the directory exact
        for entry in fs::read_dir(&tdir).map_err(|e| StoreError::io(&tdir, e))? {
            let path = entry.map_err(|e| StoreError::io(&tdir, e))?.path();
            let known = path
                .file_stem()
                .and_then(|s| s.to_str())
                .is_some_and(|stem| s.transcripts.keys().any(|id| id.as_str() == stem));
            if path.extension().is_some_and(|x| x == "json") && !known {
                fs::remove_file(&path).map_err(|e| StoreError::io(&path, e))?;
            }
        }
        self.write_doc("objectives.json", &s.objectives)?;
        self.write_doc(SHARES, s.shares.values().collect::<Vec<_>>())?;
        self.write_doc(ASSIGNMENTS, s.assignments.values().collect::<Vec<_>>())?;
        self.write_doc(CLUSTERS, s.clusters.values().collect::<Vec<_>>())?;
        self.write_doc(REVIEWS, s.reviews.values().collect::<Vec<_>>())?;
        self.write_doc(
            CLUSTER_REVIEWS,
            s.cluster_reviews.values().collect::<Vec<_>>(),
        )?;

        let new_events = &p.edit_log[logged..];
        if !new_events.is_empty() {
            let path = self.root.join(EDIT_LOG);
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| StoreError::io(&path, e))?;
            let mut buf = Vec::new();
            for e in new_events {
                serde_json::to_writer(&mut buf, e).expect("events serialize");
                buf.push(b'\n');
            }
            f.write_all(&buf).map_err(|e| StoreError::io(&path, e))?;
            f.sync_all().map_err(|e| StoreError::io(&path, e))?;
        }
        // the meta file is written last and acts as the commit marker
        write_json(&self.root.join(META), &p.meta)
    }
}

impl ProjectStore for ProjectDir {
    /// Loads every document and checks that replaying the edit log
    /// reproduces the stored state.
    fn load(&self) -> Result<Project, StoreError> {
        let meta = self.read_meta()?;
        let mut state = ProjectState {
            objectives: self.read_doc::<Vec<ResearchObjective>>("objectives.json")?,
            ..ProjectState::default()
        };
        let tdir = self.root.join(TRANSCRIPTS);
        if tdir.is_dir() {
            for entry in fs::read_dir(&tdir).map_err(|e| StoreError::io(&tdir, e))? {
                let path = entry.map_err(|e| StoreError::io(&tdir, e))?.path();
                if path.extension().is_some_and(|x| x == "json") {
                    let doc: Doc<Transcript> = read_json(&path)?;
                    state.transcripts.insert(doc.items.id.clone(), doc.items);
                }
            }
        }
        for a in self.read_doc::<Vec<TopicAssignment>>(ASSIGNMENTS)? {
            state.assignments.insert(a.id.clone(), a);
        }
        for c in self.read_doc::<Vec<TopicCluster>>(CLUSTERS)? {
            state.clusters.insert(c.id.clone(), c);
        }
        for r in self.read_doc::<Vec<ReviewRecord>>(REVIEWS)? {
            state
                .reviews
                .insert((r.reviewer_id.clone(), r.assignment_id.clone()), r);
        }
        for r in self.read_doc::<Vec<ClusterReview>>(CLUSTER_REVIEWS)? {
            state
                .cluster_reviews
                .insert((r.reviewer_id.clone(), r.cluster_id.clone()), r);
        }
        for g in self.read_doc::<Vec<ShareGrant>>(SHARES)? {
            state.shares.insert(g.token_digest.clone(), g);
        }

        let edit_log = self.read_log()?;
        let log_path = self.root.join(EDIT_LOG);
        if edit_log.len() as u64 != meta.version {
            return Err(StoreError::corrupt(
                &log_path,
                format!(
                    "{} events logged but project.meta records version {}",
                    edit_log.len(),
                    meta.version
                ),
            ));
        }
        let replayed =
            ProjectState::replay(&edit_log).map_err(|e| StoreError::corrupt(&log_path, e))?;
        if replayed != state {
            return Err(StoreError::corrupt(
                &log_path,
                "replaying the edit log does not reproduce the stored documents",
            ));
        }
        Ok(Project {
            meta,
            state,
            edit_log,
            runs: self.read_runs()?,
        })
    }

    fn save(&self, p: &Project, expected_version: u64) -> Result<(), StoreError> {
        let found = self.read_meta()?.version;
        check_commit(p, expected_version, found)?;
        self.write_documents(p, found as usize)
    }

    fn save_run(&self, run: &RunRecord) -> Result<(), StoreError> {
        let dir = self.root.join(RUNS);
        fs::create_dir_all(&dir).map_err(|e| StoreError::io(&dir, e))?;
        write_json(&dir.join(format!("{}.json", run.id)), run)
    }
}

/// A directory holding one subdirectory per project.
#[derive(Debug, Clone)]
pub struct DirStore {
    root: PathBuf,
}

impl DirStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn validate_id(id: &str) -> Result<(), StoreError> {
        let ok = !id.is_empty()
            && id.len() <= 64
            && id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
        if ok {
            Ok(())
        } else {
            Err(StoreError::InvalidId(id.to_string()))
        }
    }

    pub fn project(&self, id: &ProjectId) -> Result<ProjectDir, StoreError> {
        Self::validate_id(id.as_str())?;
        Ok(ProjectDir::new(self.root.join(id.as_str())))
    }

    pub fn create(&self, p: &Project) -> Result<ProjectDir, StoreError> {
        let dir = self.project(&p.meta.id)?;
        if dir.exists() {
            return Err(StoreError::AlreadyExists(p.meta.id.to_string()));
        }
        dir.create(p)?;
        Ok(dir)
    }

    pub fn open(&self, id: &ProjectId) -> Result<ProjectDir, StoreError> {
        let dir = self.project(id)?;
        if !dir.exists() {
            return Err(StoreError::NotFound(id.to_string()));
        }
        Ok(dir)
    }

    /// Metadata of every project, ordered by id.
    pub fn list(&self) -> Result<Vec<ProjectMeta>, StoreError> {
        let entries = match fs::read_dir(&self.root) {
            Ok(e) => e,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(StoreError::io(&self.root, e)),
        };
        let mut out = Vec::new();
        for entry in entries {
            let path = entry.map_err(|e| StoreError::io(&self.root, e))?.path();
            let dir = ProjectDir::new(&path);
            if dir.exists() {
                out.push(dir.read_meta()?);
            }
        }
        out.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(out)
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, StoreError> {
    let bytes = fs::read(path).map_err(|e| StoreError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| StoreError::corrupt(path, e))
}

/// Serializes deterministically and replaces `path` atomically: write a
/// temporary sibling, sync it, then rename over the target.
fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), StoreError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("documents serialize");
    bytes.push(b'\n');
    if fs::read(path).is_ok_and(|old| old == bytes) {
        return Ok(());
    }
    let parent = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(parent).map_err(|e| StoreError::io(parent, e))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("doc");
    let tmp = parent.join(format!(".{name}.tmp"));
    {
        let mut f = File::create(&tmp).map_err(|e| StoreError::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| StoreError::io(&tmp, e))?;
        f.sync_all().map_err(|e| StoreError::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| StoreError::io(path, e))?;
    if let Ok(d) = File::open(parent) {
        let _ = d.sync_all();
    }
    Ok(())
}
