//! Acceptance suite: prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Everything runs offline against the fixtures in
//! the repository root.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use serde::Deserialize;
use tapestry_core::agreement::{
    compare_exact, jaccard, welch_t, welch_t_from_summary, AgreementError,
};
use tapestry_core::chat::{answer_question, retrieve, ChatError};
use tapestry_core::clustering::{
    hdbscan_points, partition, HdbscanParams, Label, NgramHashEmbedder,
};
use tapestry_core::extraction::{extract_topics, parse_assignments, ExtractionConfig, UNMATCHED};
use tapestry_core::gateway::{
    CompletionRequest, Gateway, GatewayError, ScriptedStub, SyntheticResponder,
};
use tapestry_core::project::{
    backward_links, export_report, forward_links, trace_backward, Audience, MemoryStore, Project,
    ProjectDir, ProjectSettings, ProjectStore, Report, ReportOptions, RunStatus,
};
use tapestry_core::review::{acceptance_summary, adjusted_acceptance, EditRequest, ReviewRecord};
use tapestry_core::state::ProjectState;
use tapestry_core::transcript::{
    interviewee_statements, parse_transcript, ColumnMap, IngestOptions, InputFormat, RawTable,
    ResearchObjective,
};
use tapestry_core::workflow::{
    Actor, ClusteringRequest, ExtractionRequest, ProjectService, Providers, ServiceError,
};
use tapestry_core::{AssignmentId, ClusterId, FixedClock, ProjectId};

type Outcome = Result<String, String>;
type Check = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($fmt)+));
        }
    };
}

trait OrFail<T> {
    fn or_fail(self, what: &str) -> Result<T, String>;
}

impl<T, E: std::fmt::Display> OrFail<T> for Result<T, E> {
    fn or_fail(self, what: &str) -> Result<T, String> {
        self.map_err(|e| format!("{what}: {e}"))
    }
}

const CLOCK_MS: u64 = 1_700_000_000_000;

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn read(rel: &str) -> String {
    std::fs::read_to_string(repo().join(rel)).unwrap_or_else(|e| panic!("reading {rel}: {e}"))
}

fn objectives() -> Vec<ResearchObjective> {
    serde_json::from_str(&read("fixtures/objectives.json")).expect("objectives fixture parses")
}

fn ingest_options(label: &str) -> IngestOptions {
    IngestOptions {
        mapping: ColumnMap {
            speaker: "speaker".into(),
            text: "text".into(),
            timestamp: None,
            interviewee: label.into(),
        },
        participant_label: label.into(),
        source_name: Some(format!("{}_interview.csv", label.to_lowercase())),
    }
}

fn new_project() -> Project {
    Project::new(
        ProjectId::new("run1"),
        "Fixture interviews",
        ProjectSettings::default(),
        CLOCK_MS,
    )
}

/// Opens a service over `store` with the three fixture interviews ingested.
fn fixture_service(
    store: Box<dyn ProjectStore>,
    gateway: Arc<dyn Gateway>,
) -> Result<ProjectService, String> {
    let svc = ProjectService::open(
        store,
        Arc::new(FixedClock(CLOCK_MS)),
        Providers {
            gateway,
            embedder: Arc::new(NgramHashEmbedder),
        },
    )
    .or_fail("open")?;
    let lead = lead();
    svc.set_objectives(&lead, &objectives())
        .or_fail("objectives")?;
    for label in ["P1", "P2", "P4"] {
        let raw = read(&format!("fixtures/{}_interview.csv", label.to_lowercase()));
        svc.ingest(&lead, &raw, InputFormat::Csv, &ingest_options(label))
            .or_fail("ingest")?;
    }
    Ok(svc)
}

fn lead() -> Actor {
    Actor::lead("acceptance")
}

fn run_pipeline(svc: &ProjectService) -> Result<(), String> {
    let lead = lead();
    let req = ExtractionRequest {
        max_topics: Some(5),
        context_turns: Some(4),
        ..Default::default()
    };
    let run = svc.extract(&lead, &req).or_fail("extract")?;
    ensure!(
        run.status == RunStatus::Completed,
        "extraction run {:?}: {:?}",
        run.status,
        run.failure
    );
    let run = svc
        .cluster(&lead, &ClusteringRequest::default())
        .or_fail("cluster")?;
    ensure!(
        run.status == RunStatus::Completed,
        "clustering run {:?}: {:?}",
        run.status,
        run.failure
    );
    Ok(())
}

fn recorded_stub() -> Arc<dyn Gateway> {
    Arc::new(ScriptedStub::load(&repo().join("fixtures/run1")).expect("fixtures/run1 loads"))
}

/// Clustered fixture project in memory, answered by the recorded stub.
fn clustered_fixture() -> Result<ProjectService, String> {
    let svc = fixture_service(Box::new(MemoryStore::new(new_project())), recorded_stub())?;
    run_pipeline(&svc)?;
    Ok(svc)
}

// ----- clustering -----

#[derive(Deserialize)]
struct HdbscanCase {
    seed: u64,
    min_cluster_size: usize,
    min_samples: usize,
    points: Vec<Vec<f64>>,
    labels: Vec<i64>,
}

fn hdbscan_oracle() -> Outcome {
    let cases: Vec<HdbscanCase> =
        serde_json::from_str(&read("crates/core/tests/fixtures/hdbscan_reference.json"))
            .or_fail("reference fixture")?;
    ensure!(cases.len() >= 20, "only {} reference datasets", cases.len());
    let mut slowest = Duration::ZERO;
    for c in &cases {
        ensure!(
            c.points.len() <= 200,
            "seed {}: {} points",
            c.seed,
            c.points.len()
        );
        ensure!(
            c.points[0].len() <= 16,
            "seed {}: {} dims",
            c.seed,
            c.points[0].len()
        );
        let start = Instant::now();
        let got = hdbscan_points(
            &c.points,
            &HdbscanParams::new(c.min_cluster_size, c.min_samples),
        )
        .or_fail(&format!("seed {}", c.seed))?;
        let elapsed = start.elapsed();
        slowest = slowest.max(elapsed);
        let want: Vec<Label> = c
            .labels
            .iter()
            .map(|&l| {
                if l < 0 {
                    Label::Noise
                } else {
                    Label::Cluster(l as usize)
                }
            })
            .collect();
        ensure!(
            partition(&got) == partition(&want),
            "seed {}: partition differs from reference",
            c.seed
        );
        ensure!(
            elapsed < Duration::from_secs(1),
            "seed {} took {elapsed:?}",
            c.seed
        );
    }
    Ok(format!(
        "{} datasets equal to reference, slowest {slowest:.2?}",
        cases.len()
    ))
}

fn hdbscan_triads() -> Outcome {
    let within = 1.0;
    let h = within * 3f64.sqrt() / 2.0;
    let tri = |x0: f64| {
        vec![
            vec![x0, 0.0],
            vec![x0 + within, 0.0],
            vec![x0 + within / 2.0, h],
        ]
    };
    let mut pts = tri(0.0);
    pts.extend(tri(1000.0 * within));
    for min_samples in [1, 2, 3] {
        let labels =
            hdbscan_points(&pts, &HdbscanParams::new(3, min_samples)).or_fail("hdbscan")?;
        let (clusters, noise) = partition(&labels);
        ensure!(
            clusters == vec![vec![0, 1, 2], vec![3, 4, 5]] && noise.is_empty(),
            "min_samples {min_samples}: clusters {clusters:?}, noise {noise:?}"
        );
    }
    Ok("2 clusters, 0 noise for min_samples 1..=3".into())
}

// ----- agreement -----

fn jaccard_oracle() -> Outcome {
    const VOCAB: &[&str] = &[
        "pricing",
        "onboarding",
        "docs",
        "gpu limits",
        "sharing",
        "trust",
        "support",
        "export",
        "latency",
        "billing",
    ];
    let mut rng = StdRng::seed_from_u64(7);
    let mut undefined = 0;
    for i in 0..500 {
        let pick = |rng: &mut StdRng| -> Vec<String> {
            let k = rng.random_range(0..=5);
            VOCAB
                .choose_multiple(rng, k)
                .map(|w| {
                    if rng.random_bool(0.3) {
                        w.to_uppercase()
                    } else {
                        w.to_string()
                    }
                })
                .collect()
        };
        let (a, b) = (pick(&mut rng), pick(&mut rng));
        let sa: BTreeSet<String> = a.iter().map(|s| s.to_lowercase()).collect();
        let sb: BTreeSet<String> = b.iter().map(|s| s.to_lowercase()).collect();
        let union = sa.union(&sb).count();
        let got = jaccard(&compare_exact(&a, &b));
        if union == 0 {
            ensure!(
                got == Err(AgreementError::Undefined),
                "pair {i}: empty lists gave {got:?}"
            );
            undefined += 1;
            continue;
        }
        let want = sa.intersection(&sb).count() as f64 / union as f64;
        ensure!(
            got == Ok(want),
            "pair {i}: {a:?} vs {b:?} gave {got:?}, brute force {want}"
        );
    }
    Ok(format!(
        "500 pairs exact ({undefined} both-empty pairs undefined)"
    ))
}

#[derive(Deserialize)]
struct WelchSample {
    xs: Vec<f64>,
    ys: Vec<f64>,
    t: f64,
    df: f64,
    p: f64,
}

#[derive(Deserialize)]
struct WelchReference {
    samples: Vec<WelchSample>,
}

fn welch_oracle() -> Outcome {
    let r: WelchReference =
        serde_json::from_str(&read("crates/core/tests/fixtures/welch_reference.json"))
            .or_fail("reference fixture")?;
    ensure!(
        r.samples.len() >= 10,
        "only {} reference pairs",
        r.samples.len()
    );
    let mut worst: f64 = 0.0;
    for (i, c) in r.samples.iter().enumerate() {
        let w = welch_t(&c.xs, &c.ys).or_fail(&format!("pair {i}"))?;
        for (got, want) in [
            (w.t_statistic, c.t),
            (w.degrees_of_freedom, c.df),
            (w.p_value, c.p),
        ] {
            let err = (got - want).abs() / want.abs().max(1.0);
            worst = worst.max(err);
            ensure!(err <= 1e-9, "pair {i}: got {got}, reference {want}");
        }
    }
    let s = welch_t_from_summary(0.51, 0.36, 80, 0.41, 0.31, 172).or_fail("summary")?;
    ensure!(
        (2.0..=2.4).contains(&s.t_statistic),
        "published summaries give t = {}",
        s.t_statistic
    );
    Ok(format!(
        "{} pairs within {worst:.1e}; summaries give t = {:.3}, df = {:.1}, p = {:.4}",
        r.samples.len(),
        s.t_statistic,
        s.degrees_of_freedom,
        s.p_value
    ))
}

// ----- review -----

fn record(accept: bool, topic: bool, ro: bool, tcn: bool) -> ReviewRecord {
    ReviewRecord {
        reviewer_id: "r".into(),
        assignment_id: AssignmentId::new("a"),
        q1_topic_match: 3,
        q2_ro_match: 3,
        q3_topic_tcn_match: 3,
        accept_ai: accept,
        revised_topic: topic.then(|| "new topic".into()),
        revised_ro: ro.then(|| "RO2".into()),
        revised_tcn: tcn.then(|| "New name".into()),
    }
}

fn adjusted_acceptance_table() -> Outcome {
    let mut rows = 0;
    for accept in [false, true] {
        for bits in 0..8u8 {
            let (t, ro, tcn) = (bits & 1 != 0, bits & 2 != 0, bits & 4 != 0);
            let got = adjusted_acceptance(&record(accept, t, ro, tcn));
            // item flag = accept OR (not accept AND item not revised)
            let rule = |revised: bool| accept || (!accept && !revised);
            ensure!(
                got.topic == rule(t) && got.ro == rule(ro) && got.tcn == rule(tcn),
                "accept={accept} revised=({t},{ro},{tcn}) gave {got:?}"
            );
            rows += 1;
        }
    }
    let mut rng = StdRng::seed_from_u64(11);
    for corpus in 0..200 {
        let n = rng.random_range(0..60);
        let records: Vec<ReviewRecord> = (0..n)
            .map(|_| {
                let accept = rng.random_bool(0.5);
                let mut r = record(
                    accept,
                    rng.random_bool(0.4),
                    rng.random_bool(0.4),
                    rng.random_bool(0.4),
                );
                if !accept && !r.has_revision() {
                    r.revised_topic = Some("forced revision".into());
                }
                r
            })
            .collect();
        let s = acceptance_summary(&records);
        for (q, c) in [("Q1", s.q1_topic), ("Q2", s.q2_ro), ("Q3", s.q3_tcn)] {
            ensure!(
                c.adjusted >= c.raw,
                "corpus {corpus} {q}: adjusted {} < raw {}",
                c.adjusted,
                c.raw
            );
        }
    }
    Ok(format!(
        "{rows} truth-table rows match; adjusted >= raw on 200 random corpora"
    ))
}

// ----- extraction -----

/// Answers every prompt with an empty topic list.
struct EmptyLists;

impl Gateway for EmptyLists {
    fn complete(&self, _req: &CompletionRequest) -> Result<String, GatewayError> {
        Ok("[]".into())
    }
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).expect("readable project dir") {
            let path = entry.expect("dir entry").path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).expect("inside root").to_path_buf();
                out.insert(rel, std::fs::read(&path).expect("readable file"));
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn extraction_contract() -> Outcome {
    let objectives = objectives();
    let table =
        RawTable::parse(&read("fixtures/p4_interview.csv"), InputFormat::Csv).or_fail("p4 csv")?;
    let p4 = parse_transcript(&table, &ingest_options("P4")).or_fail("p4 transcript")?;
    let statements = interviewee_statements(&p4);
    ensure!(
        statements.len() == 92,
        "P4 fixture has {} statements",
        statements.len()
    );

    let mut rng = StdRng::seed_from_u64(3);
    let mut unmatched_seen = 0;
    for case in 0..300 {
        let t = rng.random_range(1..=5);
        let n = rng.random_range(0..10);
        let statement = *statements.choose(&mut rng).expect("statements");
        let words: Vec<&str> = statement.text.split_whitespace().collect();
        let records: Vec<serde_json::Value> = (0..n)
            .map(|i| {
                let ro = match rng.random_range(0..4) {
                    0 => "RO9: Understand market positioning".to_string(),
                    1 => objectives[i % objectives.len()].id.clone(),
                    2 => format!("{}: {}", objectives[0].id, objectives[0].text),
                    _ => String::new(),
                };
                let len = rng.random_range(1..=words.len().min(4));
                serde_json::json!({
                    "topic": format!("topic {i}"),
                    "phrase": words[..len].join(" "),
                    "research_objective": ro,
                })
            })
            .collect();
        let mut cfg = ExtractionConfig::new(objectives.clone());
        cfg.max_topics = t;
        let resp = serde_json::Value::Array(records).to_string();
        let parsed =
            parse_assignments(&resp, &p4.id, statement, &cfg).or_fail(&format!("case {case}"))?;
        ensure!(
            parsed.assignments.len() <= t,
            "case {case}: {} > t = {t}",
            parsed.assignments.len()
        );
        ensure!(
            parsed.assignments.len() == n.min(t),
            "case {case}: kept {}",
            parsed.assignments.len()
        );
        let unmatched = parsed
            .assignments
            .iter()
            .filter(|a| a.research_objective_id == UNMATCHED)
            .count();
        let warnings = parsed
            .warnings
            .iter()
            .filter(|w| w.message.starts_with("unmatched research objective"))
            .count();
        ensure!(
            unmatched == warnings,
            "case {case}: {unmatched} UNMATCHED vs {warnings} warnings"
        );
        unmatched_seen += unmatched;
    }
    ensure!(unmatched_seen > 0, "no UNMATCHED assignment was generated");

    let empty = extract_topics(&p4, &ExtractionConfig::new(objectives.clone()), &EmptyLists)
        .or_fail("empty lists")?;
    ensure!(
        empty.assignments.is_empty() && empty.report.errors.is_empty(),
        "`[]` responses gave {} assignments, {} errors",
        empty.assignments.len(),
        empty.report.errors.len()
    );

    let start = Instant::now();
    let work = tempfile::tempdir().or_fail("tempdir")?;
    let mut trees = Vec::new();
    for i in 0..2 {
        let dir = ProjectDir::new(work.path().join(format!("run{i}")));
        dir.create(&new_project()).or_fail("create")?;
        let svc = fixture_service(Box::new(ProjectDir::new(dir.path())), recorded_stub())?;
        run_pipeline(&svc)?;
        trees.push(tree(dir.path()));
    }
    let elapsed = start.elapsed();
    ensure!(
        trees[0] == trees[1],
        "project files differ between the two runs"
    );
    ensure!(
        elapsed < Duration::from_secs(30),
        "two pipeline runs took {elapsed:?}"
    );
    let bytes: usize = trees[0].values().map(Vec::len).sum();
    Ok(format!(
        "300 random responses respect t and flag {unmatched_seen} UNMATCHED; `[]` gives 0; \
         two stub runs over 162 statements byte-identical ({} files, {bytes} bytes) in {elapsed:.2?}",
        trees[0].len()
    ))
}

// ----- traceability -----

const SENTENCES: &[&str] = &[
    "The pricing page never told me what a month would cost.",
    "Billing surprised us at the end of the quarter.",
    "Setup took most of the first week.",
    "Onboarding was slow because nobody explained the login step.",
    "The documentation is out of date for the new release.",
    "I wanted one complete example for batch jobs.",
    "Jobs slow down badly when the GPU queue fills up.",
    "We hit memory limits on every large run.",
    "Sharing results with my team means exporting screenshots.",
    "Handoffs between colleagues lose context.",
    "I do not trust the numbers without checking them.",
    "Accuracy on our own data was worse than the demo.",
    "The help desk closed my ticket without a fix.",
    "Support answers take days.",
    "Compliance needs an audit trail for every access.",
    "Permission settings are too coarse for our security team.",
    "Export to our warehouse is a manual step.",
    "The API does not cover the pipeline features we use.",
    "Honestly the weather was nice that week.",
    "I had lunch with the product manager once.",
];

fn random_transcript(rng: &mut StdRng, label: &str) -> String {
    let mut csv = String::from("speaker,text\n");
    for i in 0..rng.random_range(6..18) {
        csv.push_str(&format!("INTERVIEWER,Question {i} for {label}?\n"));
        let s = SENTENCES.choose(rng).expect("sentences");
        csv.push_str(&format!("{label},\"{s}\"\n"));
    }
    csv
}

fn random_edit(rng: &mut StdRng, state: &ProjectState) -> Option<EditRequest> {
    let live: Vec<&AssignmentId> = state
        .assignments
        .values()
        .filter(|a| !a.is_rejected())
        .map(|a| &a.id)
        .collect();
    let rejected: Vec<&AssignmentId> = state
        .assignments
        .values()
        .filter(|a| a.is_rejected())
        .map(|a| &a.id)
        .collect();
    let clusters: Vec<&ClusterId> = state.clusters.keys().collect();
    let pick_cluster = |rng: &mut StdRng| clusters.choose(rng).map(|c| (*c).clone());
    Some(match rng.random_range(0..6) {
        0 => EditRequest::MoveAssignment {
            assignment_id: (*live.choose(rng)?).clone(),
            to_cluster_id: if rng.random_bool(0.8) {
                pick_cluster(rng)
            } else {
                None
            },
        },
        1 => {
            let mut ids: Vec<ClusterId> = clusters
                .choose_multiple(rng, 2)
                .map(|c| (*c).clone())
                .collect();
            ids.shuffle(rng);
            EditRequest::MergeClusters { cluster_ids: ids }
        }
        2 => {
            let c = state.clusters.get(*clusters.choose(rng)?)?;
            let k = rng.random_range(1..=c.member_assignment_ids.len().max(1));
            EditRequest::SplitCluster {
                cluster_id: c.id.clone(),
                assignment_ids: c
                    .member_assignment_ids
                    .choose_multiple(rng, k)
                    .cloned()
                    .collect(),
            }
        }
        3 => EditRequest::Reject {
            assignment_id: (*live.choose(rng)?).clone(),
        },
        4 => EditRequest::Restore {
            assignment_id: (*rejected.choose(rng)?).clone(),
            to_cluster_id: pick_cluster(rng).filter(|_| rng.random_bool(0.5)),
        },
        _ => EditRequest::RenameCluster {
            cluster_id: pick_cluster(rng)?,
            name: format!("Renamed {}", rng.random_range(0..100)),
        },
    })
}

fn summary_quotes_resolve(p: &Project) -> Result<usize, String> {
    let opts = ReportOptions {
        top_k: usize::MAX,
        ..ReportOptions::new(Audience::StakeholderSummary)
    };
    let Report::StakeholderSummary(s) = export_report(p, &opts).or_fail("summary")? else {
        return Err("expected a stakeholder summary".into());
    };
    let mut n = 0;
    for c in &s.clusters {
        for q in &c.quotes {
            let t = p
                .state
                .transcripts
                .get(&q.transcript_id)
                .ok_or_else(|| format!("quote cites unknown transcript {}", q.transcript_id))?;
            let turn = t
                .turn(q.statement_index)
                .ok_or_else(|| format!("quote cites missing statement {}", q.statement_index))?;
            ensure!(
                q.span.slice(&turn.text) == Some(q.text.as_str()),
                "quote `{}` does not match {}:{} at {:?}",
                q.text,
                q.participant_label,
                q.statement_index,
                q.span
            );
            n += 1;
        }
    }
    Ok(n)
}

fn traceability() -> Outcome {
    let mut rng = StdRng::seed_from_u64(5);
    let (mut links, mut edits_applied, mut quotes) = (0, 0, 0);
    for seed in 0..20 {
        let svc = ProjectService::open(
            Box::new(MemoryStore::new(new_project())),
            Arc::new(FixedClock(CLOCK_MS)),
            Providers {
                gateway: Arc::new(SyntheticResponder::new()),
                embedder: Arc::new(NgramHashEmbedder),
            },
        )
        .or_fail("open")?;
        let lead = lead();
        svc.set_objectives(&lead, &objectives())
            .or_fail("objectives")?;
        for label in ["P1", "P2", "P3"].iter().take(rng.random_range(1..=3)) {
            let raw = random_transcript(&mut rng, label);
            // identical random transcripts are rejected as duplicates
            let _ = svc.ingest(&lead, &raw, InputFormat::Csv, &ingest_options(label));
        }
        svc.extract(&lead, &ExtractionRequest::default())
            .or_fail("extract")?;
        if svc.snapshot().state.assignments.len() < 2 {
            continue;
        }
        svc.cluster(&lead, &ClusteringRequest::default())
            .or_fail("cluster")?;
        for step in 0..25 {
            let p = svc.snapshot();
            let fwd = forward_links(&p.state).or_fail("forward")?;
            let bwd = backward_links(&p.state).or_fail("backward")?;
            ensure!(
                fwd == bwd,
                "seed {seed} step {step}: forward and backward links differ"
            );
            let live = p
                .state
                .assignments
                .values()
                .filter(|a| !a.is_rejected())
                .count();
            ensure!(
                fwd.len() == live,
                "seed {seed} step {step}: {} links for {live} live assignments",
                fwd.len()
            );
            links += fwd.len();
            if let Some(e) = random_edit(&mut rng, &p.state) {
                if svc.submit_edit(&lead, &e, None).is_ok() {
                    edits_applied += 1;
                }
            }
        }
        quotes += summary_quotes_resolve(&svc.snapshot())?;
    }
    let fixture = clustered_fixture()?;
    let fixture_quotes = summary_quotes_resolve(&fixture.snapshot())?;
    ensure!(
        quotes > 0 && fixture_quotes > 0,
        "no summary quotes were exported"
    );
    Ok(format!(
        "forward == backward on {links} links across 20 random projects and {edits_applied} edits; \
         {} summary quotes resolve to transcript spans",
        quotes + fixture_quotes
    ))
}

// ----- review round-trip -----

const ACCEPT_COL: &str = "Accept AI Analysis? (Yes/No)";

fn sheet_rows(raw: &str) -> Result<(csv::StringRecord, Vec<csv::StringRecord>), String> {
    let mut r = csv::Reader::from_reader(raw.as_bytes());
    let headers = r.headers().or_fail("sheet headers")?.clone();
    let rows = r
        .records()
        .collect::<Result<Vec<_>, _>>()
        .or_fail("sheet rows")?;
    Ok((headers, rows))
}

fn write_sheet(headers: &csv::StringRecord, rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(headers).expect("header");
    for r in rows {
        w.write_record(r).expect("row");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

fn review_round_trip() -> Outcome {
    let svc = clustered_fixture()?;
    let lead = lead();
    let sheet = svc.review_sheet(&lead, "alice").or_fail("export")?;
    let (headers, rows) = sheet_rows(&sheet)?;
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .unwrap_or_else(|| panic!("sheet has no `{name}` column"))
    };
    let (aid, cid) = (col("Assignment ID"), col("Cluster ID"));
    let (q1, q4, q5, acc) = (col("Q1"), col("Q4"), col("Q5"), col(ACCEPT_COL));
    let (rt, rr, rn) = (col("Revised Topic"), col("Revised RO"), col("Revised TCN"));

    let mut rng = StdRng::seed_from_u64(13);
    let ro_ids: Vec<String> = objectives().into_iter().map(|o| o.id).collect();
    let mut cluster_scores: BTreeMap<String, (u8, u8)> = BTreeMap::new();
    let mut expected: BTreeMap<AssignmentId, ReviewRecord> = BTreeMap::new();
    let mut edited: Vec<Vec<String>> = Vec::new();
    for row in &rows {
        let mut cells: Vec<String> = row.iter().map(str::to_string).collect();
        if rng.random_bool(0.85) {
            let ratings: [u8; 3] = std::array::from_fn(|_| rng.random_range(1..=5));
            let accept = rng.random_bool(0.6);
            let mut rec = ReviewRecord {
                reviewer_id: "alice".into(),
                assignment_id: AssignmentId::new(&cells[aid]),
                q1_topic_match: ratings[0],
                q2_ro_match: ratings[1],
                q3_topic_tcn_match: ratings[2],
                accept_ai: accept,
                revised_topic: None,
                revised_ro: None,
                revised_tcn: None,
            };
            if !accept {
                while !rec.has_revision() {
                    if rng.random_bool(0.5) {
                        rec.revised_topic =
                            Some(format!("revised topic {}", rng.random_range(0..50)));
                    }
                    if rng.random_bool(0.5) {
                        rec.revised_ro = ro_ids.choose(&mut rng).cloned();
                    }
                    if rng.random_bool(0.5) {
                        rec.revised_tcn = Some(format!("Better name {}", rng.random_range(0..50)));
                    }
                }
            }
            for (k, r) in ratings.iter().enumerate() {
                cells[q1 + k] = r.to_string();
            }
            cells[acc] = if accept { "Yes" } else { "No" }.into();
            cells[rt] = rec.revised_topic.clone().unwrap_or_default();
            cells[rr] = rec.revised_ro.clone().unwrap_or_default();
            cells[rn] = rec.revised_tcn.clone().unwrap_or_default();
            let (s4, s5) = *cluster_scores
                .entry(cells[cid].clone())
                .or_insert_with(|| (rng.random_range(1..=5), rng.random_range(1..=5)));
            cells[q4] = s4.to_string();
            cells[q5] = s5.to_string();
            expected.insert(rec.assignment_id.clone(), rec);
        }
        edited.push(cells);
    }
    let filled = write_sheet(&headers, &edited);
    let before = svc.snapshot().version();

    // invariant-violating rows: rating out of range, rejection without a
    // revision, unknown assignment
    let judged: Vec<usize> = (0..edited.len())
        .filter(|&i| !edited[i][acc].is_empty())
        .collect();
    let bad: Vec<usize> = judged.choose_multiple(&mut rng, 3).copied().collect();
    let mut broken = edited.clone();
    broken[bad[0]][q1] = "7".into();
    broken[bad[1]][acc] = "No".into();
    for c in [rt, rr, rn] {
        broken[bad[1]][c].clear();
    }
    broken[bad[2]][aid] = "no-such-assignment".into();
    let err = svc
        .import_reviews(&lead, &write_sheet(&headers, &broken), None)
        .err()
        .ok_or("invalid sheet was accepted")?;
    let ServiceError::Rows(row_errors) = err else {
        return Err(format!("invalid sheet gave {err}"));
    };
    let got_rows: BTreeSet<usize> = row_errors.iter().map(|e| e.row).collect();
    let want_rows: BTreeSet<usize> = bad.iter().map(|i| i + 2).collect();
    ensure!(got_rows == want_rows, "rejected rows {got_rows:?}, expected {want_rows:?} (q1=7, no revision, unknown id): {row_errors:?}");
    ensure!(
        svc.snapshot().version() == before,
        "a rejected sheet changed the project"
    );

    let summary = svc.import_reviews(&lead, &filled, None).or_fail("import")?;
    let state = svc.snapshot().state.clone();
    let stored: BTreeMap<AssignmentId, ReviewRecord> = state
        .reviews
        .values()
        .filter(|r| r.reviewer_id == "alice")
        .map(|r| (r.assignment_id.clone(), r.clone()))
        .collect();
    ensure!(
        stored == expected,
        "imported records differ from the edited sheet"
    );
    let cluster_stored: BTreeMap<String, (u8, u8)> = state
        .cluster_reviews
        .values()
        .map(|r| {
            (
                r.cluster_id.to_string(),
                (r.q4_tcn_representative, r.q5_tcs_representative),
            )
        })
        .collect();
    ensure!(
        cluster_stored == cluster_scores,
        "cluster ratings differ from the edited sheet"
    );

    let again = svc.review_sheet(&lead, "alice").or_fail("re-export")?;
    let (_, rows_again) = sheet_rows(&again)?;
    let judgement = |r: &[String]| [q1, q1 + 1, q1 + 2, acc, rt, rr, rn].map(|c| r[c].clone());
    for (i, r) in rows_again.iter().enumerate() {
        let cells: Vec<String> = r.iter().map(str::to_string).collect();
        let key = AssignmentId::new(&cells[aid]);
        let Some(orig) = edited.iter().find(|e| AssignmentId::new(&e[aid]) == key) else {
            return Err(format!(
                "re-exported row {} has unknown assignment {key}",
                i + 2
            ));
        };
        ensure!(
            judgement(&cells) == judgement(orig),
            "re-exported row {} differs",
            i + 2
        );
    }
    let second = svc
        .import_reviews(&lead, &again, None)
        .or_fail("re-import")?;
    ensure!(
        second.event_ids.is_empty() && second.unchanged == expected.len() + cluster_scores.len(),
        "re-importing the exported sheet changed {} entries",
        second.event_ids.len()
    );
    Ok(format!(
        "{} records and {} cluster ratings round-trip exactly; rows {:?} rejected by number",
        summary.records, summary.cluster_reviews, got_rows
    ))
}

// ----- chat -----

fn chat_grounding() -> Outcome {
    let svc = fixture_service(
        Box::new(MemoryStore::new(new_project())),
        Arc::new(SyntheticResponder::new()),
    )?;
    run_pipeline(&svc)?;
    let lead = lead();
    let subjects = [
        "pricing",
        "setup",
        "documentation",
        "performance",
        "memory limits",
        "sharing results",
        "trust",
        "support",
        "compliance",
        "export",
    ];
    let templates = [
        "What did participants say about {}?",
        "Who mentioned {}?",
        "Which concerns came up about {}?",
        "How do people feel about {}?",
        "Summarize the feedback on {}.",
    ];
    let p = svc.snapshot();
    let (mut answered, mut quotes) = (0, 0);
    for s in subjects {
        for t in templates {
            let q = t.replace("{}", s);
            let a = svc.chat(&lead, &q).or_fail(&q)?;
            if !a.quotes.is_empty() {
                answered += 1;
            }
            for quote in &a.quotes {
                let trace =
                    trace_backward(&p.state, &quote.cluster_id).or_fail("trace_backward")?;
                let m = trace
                    .members
                    .iter()
                    .find(|m| m.assignment_id == quote.assignment_id)
                    .ok_or_else(|| {
                        format!(
                            "`{q}`: quote from {} is not in {}",
                            quote.assignment_id, quote.cluster_id
                        )
                    })?;
                let turn = p.state.transcripts[&m.anchor.transcript_id]
                    .turn(m.anchor.statement_index)
                    .ok_or("anchored statement missing")?;
                ensure!(
                    quote.span.slice(&turn.text) == Some(quote.text.as_str()),
                    "`{q}`: quote `{}` is not at its span",
                    quote.text
                );
                quotes += 1;
            }
        }
    }
    ensure!(
        answered >= 40,
        "only {answered} of 50 questions got quoted answers"
    );

    let question = "What did participants say about pricing?";
    let evidence = retrieve(&p.state, question, 8);
    let shown = evidence
        .first()
        .ok_or("no evidence for the poisoned question")?;
    let fabricated = serde_json::json!({
        "answer": "Everyone loved the price.",
        "quotes": [{"evidence": shown.assignment_id, "quote": "we would happily pay twice the current price"}]
    });
    let unshown = p
        .state
        .assignments
        .keys()
        .find(|id| evidence.iter().all(|e| &e.assignment_id != *id))
        .ok_or("every assignment was shown")?;
    let misattributed = serde_json::json!({
        "answer": "P4 raised it.",
        "quotes": [{"evidence": unshown, "quote": shown.statement}]
    });
    for (label, poisoned) in [
        ("fabricated quote", fabricated),
        ("unretrieved evidence", misattributed),
    ] {
        let stub = ScriptedStub::new().with_playback([poisoned.to_string()]);
        match answer_question(&p.state, question, &stub, 8) {
            Err(ChatError::Ungrounded { .. }) => {}
            other => return Err(format!("{label}: poisoned answer gave {other:?}")),
        }
    }
    Ok(format!(
        "{quotes} quotes in {answered}/50 answers resolve through trace_backward; 2 poisoned answers rejected"
    ))
}

fn panic_text(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "panicked".into())
}

fn main() {
    let checks: [Check; 9] = [
        ("HDBSCAN oracle", hdbscan_oracle),
        ("HDBSCAN analytic triads", hdbscan_triads),
        ("Jaccard oracle", jaccard_oracle),
        ("Welch oracle", welch_oracle),
        ("Adjusted acceptance truth table", adjusted_acceptance_table),
        ("Extraction contract", extraction_contract),
        ("Traceability", traceability),
        ("Review protocol round-trip", review_round_trip),
        ("Chat grounding", chat_grounding),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in checks {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| Err(panic_text(p)));
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{:.2?}]", start.elapsed()),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        checks.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
