use std::fmt::{self, Write as _};
use std::process::ExitCode;

use clap::ValueEnum;
use serde::Serialize;
use serde_json::json;
use tapestry_core::agreement::{render_report_text, render_statement_table, AgreementReport};
use tapestry_core::chat::ChatAnswer;
use tapestry_core::gateway::GatewayError;
use tapestry_core::project::{BackwardTrace, ForwardTrace, Project, RunKind, RunRecord, RunStatus};
use tapestry_core::review::{AcceptanceSummary, RatingDistribution, TcnConflict};
use tapestry_core::transcript::ResearchObjective;
use tapestry_core::workflow::{ClusterSummary, ServiceError};
use tapestry_core::RunId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

/// Prints `value` as pretty JSON or through `text`.
pub fn emit<T: Serialize>(
    fmt: Format,
    value: &T,
    text: impl FnOnce(&T) -> String,
) -> anyhow::Result<()> {
    match fmt {
        Format::Json => println!("{}", serde_json::to_string_pretty(value)?),
        Format::Text => print!("{}", text(value)),
    }
    Ok(())
}

/// A failure that carries its own error class, such as a failed run.
#[derive(Debug)]
pub struct Failure {
    pub code: String,
    pub message: String,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

fn classify(e: &anyhow::Error) -> (String, serde_json::Value) {
    for cause in e.chain() {
        if let Some(s) = cause.downcast_ref::<ServiceError>() {
            return (s.code().to_string(), s.detail());
        }
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return (f.code.clone(), serde_json::Value::Null);
        }
        if let Some(g) = cause.downcast_ref::<GatewayError>() {
            return ("provider_failure".into(), json!({ "class": g.class() }));
        }
        if let Some(io) = cause.downcast_ref::<std::io::Error>() {
            if io.kind() == std::io::ErrorKind::NotFound {
                return ("not_found".into(), serde_json::Value::Null);
            }
        }
        if cause.downcast_ref::<toml::de::Error>().is_some() {
            return ("validation".into(), serde_json::Value::Null);
        }
    }
    ("internal".into(), serde_json::Value::Null)
}

/// Exit status for each error class.
pub fn exit_code(code: &str) -> u8 {
    match code {
        "validation" => 2,
        "not_found" => 3,
        "conflict" => 4,
        "forbidden" => 5,
        "provider_failure" => 6,
        _ => 1,
    }
}

/// Prints `error[<class>]: <message>` (or a JSON error object) to stderr.
pub fn report_error(e: &anyhow::Error, fmt: Format) -> ExitCode {
    let (code, detail) = classify(e);
    let service = e.chain().find_map(|c| c.downcast_ref::<ServiceError>());
    let message = match service {
        Some(ServiceError::Field { field, message }) => format!("{field}: {message}"),
        _ => format!("{e:#}"),
    };
    match fmt {
        Format::Json => eprintln!(
            "{}",
            json!({ "code": code, "message": message, "detail": detail })
        ),
        Format::Text => {
            eprintln!("error[{code}]: {message}");
            if let Some(ServiceError::Rows(rows)) = service {
                for r in rows {
                    eprintln!("  {r}");
                }
            }
        }
    }
    ExitCode::from(exit_code(&code))
}

#[derive(Debug, Serialize)]
pub struct LastRun {
    pub id: RunId,
    pub kind: RunKind,
    pub status: RunStatus,
}

#[derive(Debug, Serialize)]
pub struct Status {
    pub id: String,
    pub name: String,
    pub version: u64,
    pub objectives: usize,
    pub transcripts: usize,
    pub statements: usize,
    pub live_assignments: usize,
    pub rejected_assignments: usize,
    pub clusters: usize,
    pub reviews: usize,
    pub cluster_reviews: usize,
    pub last_run: Option<LastRun>,
}

pub fn status(p: &Project) -> Status {
    let s = &p.state;
    let rejected = s.assignments.values().filter(|a| a.is_rejected()).count();
    Status {
        id: p.meta.id.to_string(),
        name: p.meta.name.clone(),
        version: p.meta.version,
        objectives: s.objectives.len(),
        transcripts: s.transcripts.len(),
        statements: s
            .transcripts
            .values()
            .map(|t| t.turns.iter().filter(|x| t.is_statement(x.index)).count())
            .sum(),
        live_assignments: s.assignments.len() - rejected,
        rejected_assignments: rejected,
        clusters: s.clusters.len(),
        reviews: s.reviews.len(),
        cluster_reviews: s.cluster_reviews.len(),
        last_run: p.runs.values().next_back().map(|r| LastRun {
            id: r.id.clone(),
            kind: r.kind,
            status: r.status,
        }),
    }
}

pub fn status_text(s: &Status) -> String {
    let mut out = format!(
        "project      {} ({})\nversion      {}\nobjectives   {}\ntranscripts  {} ({} statements)\n\
         assignments  {} live, {} rejected\nclusters     {}\nreviews      {} topic, {} cluster\n",
        s.name,
        s.id,
        s.version,
        s.objectives,
        s.transcripts,
        s.statements,
        s.live_assignments,
        s.rejected_assignments,
        s.clusters,
        s.reviews,
        s.cluster_reviews
    );
    if let Some(r) = &s.last_run {
        let kind = format!("{:?}", r.kind).to_lowercase();
        let status = format!("{:?}", r.status).to_lowercase();
        let _ = writeln!(out, "last run     {} {kind} {status}", r.id);
    }
    out
}

pub fn objectives_text(os: &[ResearchObjective]) -> String {
    os.iter()
        .map(|o| format!("{}\t{}\n", o.id, o.text))
        .collect()
}

pub fn run_text(r: &RunRecord) -> String {
    let status = match r.status {
        RunStatus::Queued => "queued",
        RunStatus::Running => "running",
        RunStatus::Completed => "completed",
        RunStatus::Failed => "failed",
    };
    let c = &r.counts;
    match r.kind {
        RunKind::Extraction => format!(
            "run {} {status}: {} transcripts, {} statements, {} assignments ({} warnings, {} errors)\n",
            r.id, c.transcripts, c.statements, c.assignments, c.warnings, c.errors
        ),
        RunKind::Clustering => format!(
            "run {} {status}: {} clusters from {} assignments\n",
            r.id, c.clusters, c.assignments
        ),
    }
}

pub fn clusters_text(cs: &[ClusterSummary]) -> String {
    let mut out = String::new();
    for c in cs {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t[{}]",
            c.cluster.id,
            c.frequency,
            c.cluster.name,
            c.participants.join(", ")
        );
    }
    out
}

pub fn forward_text(t: &ForwardTrace) -> String {
    let mut out = format!(
        "{}:{} {}\n",
        t.participant_label, t.statement.statement_index, t.text
    );
    for l in &t.assignments {
        let a = &l.assignment;
        let cluster = l.cluster.as_ref().map_or_else(
            || "unclustered".to_string(),
            |c| format!("{} {}", c.id, c.name),
        );
        let _ = writeln!(
            out,
            "  {}\t{}\t{}\t-> {}\t({} reviews)",
            a.id,
            a.topic,
            a.research_objective_id,
            cluster,
            l.reviews.len()
        );
    }
    out
}

pub fn backward_text(t: &BackwardTrace) -> String {
    let mut out = format!(
        "{} {}\n{}\n",
        t.cluster.id, t.cluster.name, t.cluster.summary
    );
    for m in &t.members {
        let _ = writeln!(
            out,
            "  {}\t{}\t{}:{}\t\"{}\"",
            m.assignment_id,
            m.topic,
            m.anchor.participant_label,
            m.anchor.statement_index,
            m.anchor.phrase
        );
    }
    out
}

#[derive(Debug, Serialize)]
pub struct Stats {
    pub acceptance: AcceptanceSummary,
    pub ratings: RatingDistribution,
    pub tcn_conflicts: Vec<TcnConflict>,
}

pub fn stats_text(s: &Stats) -> String {
    let a = &s.acceptance;
    let mut out = format!(
        "review records  {}\n\nquestion  raw yes  adjusted yes\n",
        a.records
    );
    for (q, c) in [("Q1", &a.q1_topic), ("Q2", &a.q2_ro), ("Q3", &a.q3_tcn)] {
        let _ = writeln!(out, "{q:<8}  {:>7}  {:>12}", c.raw, c.adjusted);
    }
    out.push_str("\nrating       1     2     3     4     5  total  share 4-5\n");
    for (q, h) in &s.ratings.questions {
        let high = h
            .proportion_high
            .map_or_else(|| "-".to_string(), |p| format!("{p:.3}"));
        let _ = writeln!(
            out,
            "{q:<6}  {:>5} {:>5} {:>5} {:>5} {:>5}  {:>5}  {high:>9}",
            h.counts[0], h.counts[1], h.counts[2], h.counts[3], h.counts[4], h.total
        );
    }
    if !s.tcn_conflicts.is_empty() {
        let _ = writeln!(
            out,
            "\nclusters with conflicting name revisions: {}",
            s.tcn_conflicts.len()
        );
        for c in &s.tcn_conflicts {
            let revs: Vec<String> = c
                .revisions
                .iter()
                .map(|(who, name)| format!("{who}: {name}"))
                .collect();
            let _ = writeln!(out, "  {}\t{}", c.cluster_id, revs.join("; "));
        }
    }
    out
}

pub fn agreement_text(r: &AgreementReport, statements: bool) -> String {
    let mut out = render_report_text(r);
    if statements {
        for p in &r.populations {
            let _ = write!(out, "\n{}\n{}", p.label, render_statement_table(p));
        }
    }
    out
}

pub fn chat_text(a: &ChatAnswer) -> String {
    let mut out = format!("{}\n", a.answer);
    for q in &a.quotes {
        let _ = writeln!(
            out,
            "  [{}:{}] \"{}\" ({})",
            q.participant_label, q.statement_index, q.text, q.cluster_id
        );
    }
    out
}
