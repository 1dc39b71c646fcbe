//! Per-statement topic extraction against research objectives.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::gateway::{self, map_bounded, Gateway, GatewayError, RepairFailure};
use crate::ids::{AssignmentId, TranscriptId};
use crate::text::{self, CharSpan};
use crate::transcript::{
    context_slice, interviewee_statements, ConversationExcerpt, ResearchObjective, Transcript, Turn,
};

const EXTRACTION_TEMPLATE: &str = include_str!("prompts/extract_topics.txt");

/// Ceiling imposed by the extraction prompt itself.
pub const MAX_TOPICS_CEILING: usize = 5;
pub const DEFAULT_CONTEXT_TURNS: usize = 4;
pub const DEFAULT_FAILURE_THRESHOLD: f64 = 0.2;
/// Stored in place of a research objective id the model made up.
pub const UNMATCHED: &str = "UNMATCHED";

const RECORD_KEYS: &[&str] = &["topic", "phrase", "research_objective"];

#[derive(Debug, Error, PartialEq)]
pub enum ExtractionError {
    #[error("invalid extraction config: {0}")]
    Config(String),
    #[error("statement {statement_index}: {source}")]
    Parse {
        statement_index: usize,
        #[source]
        source: RepairFailure,
    },
    #[error("statement {statement_index}: {source}")]
    Gateway {
        statement_index: usize,
        #[source]
        source: GatewayError,
    },
    #[error("{failed} of {statements} statements failed (threshold {threshold})")]
    TooManyFailures {
        failed: usize,
        statements: usize,
        threshold: f64,
        report: Box<ExtractionReport>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionConfig {
    /// Maximum topics kept per statement (`t`), 1..=5.
    pub max_topics: usize,
    /// Preceding turns shown with each statement (`c`).
    pub context_turns: usize,
    pub research_objectives: Vec<ResearchObjective>,
    /// Fraction of failed statements above which the run fails.
    #[serde(default = "default_threshold")]
    pub failure_threshold: f64,
}

fn default_threshold() -> f64 {
    DEFAULT_FAILURE_THRESHOLD
}

impl ExtractionConfig {
    pub fn new(research_objectives: Vec<ResearchObjective>) -> Self {
        Self {
            max_topics: MAX_TOPICS_CEILING,
            context_turns: DEFAULT_CONTEXT_TURNS,
            research_objectives,
            failure_threshold: DEFAULT_FAILURE_THRESHOLD,
        }
    }

    pub fn validate(&self) -> Result<(), ExtractionError> {
        if !(1..=MAX_TOPICS_CEILING).contains(&self.max_topics) {
            return Err(ExtractionError::Config(format!(
                "max_topics must be in 1..={MAX_TOPICS_CEILING}, got {}",
                self.max_topics
            )));
        }
        if self.research_objectives.is_empty() {
            return Err(ExtractionError::Config(
                "at least one research objective is required".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.failure_threshold) {
            return Err(ExtractionError::Config(
                "failure_threshold must be within [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Ai,
    Human,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentStatus {
    Proposed,
    Accepted,
    Rejected,
    Edited,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicAssignment {
    pub id: AssignmentId,
    pub transcript_id: TranscriptId,
    pub statement_index: usize,
    pub topic: String,
    pub phrase: String,
    /// A configured objective id or [`UNMATCHED`].
    pub research_objective_id: String,
    pub provenance: Provenance,
    pub status: AssignmentStatus,
    pub phrase_grounded: bool,
    /// Where the phrase sits in the statement text, when grounded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phrase_span: Option<CharSpan>,
}

impl TopicAssignment {
    pub fn is_rejected(&self) -> bool {
        self.status == AssignmentStatus::Rejected
    }

    /// Recomputes grounding against the statement text.
    pub fn ground(&mut self, statement_text: &str) {
        self.phrase_span = text::find_span(statement_text, &self.phrase);
        self.phrase_grounded = self.phrase_span.is_some();
    }
}

pub fn assignment_id(transcript: &TranscriptId, statement_index: usize, k: usize) -> AssignmentId {
    AssignmentId::new(format!("{transcript}-s{statement_index:04}-{k}"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionWarning {
    pub statement_index: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatementFailure {
    pub statement_index: usize,
    pub class: String,
    pub message: String,
}

/// Machine-readable summary persisted with each extraction run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionReport {
    pub transcript_id: TranscriptId,
    pub statements: usize,
    pub assignments: usize,
    pub grounded: usize,
    pub unmatched_objectives: usize,
    pub warnings: Vec<ExtractionWarning>,
    pub errors: Vec<StatementFailure>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionOutcome {
    pub assignments: Vec<TopicAssignment>,
    pub report: ExtractionReport,
}

/// Renders the extraction prompt for one statement and its context.
pub fn build_extraction_prompt(
    excerpt: &ConversationExcerpt<'_>,
    cfg: &ExtractionConfig,
) -> String {
    let objectives = cfg
        .research_objectives
        .iter()
        .map(|ro| format!("{}: {}", ro.id, ro.text))
        .collect::<Vec<_>>()
        .join("\n");
    EXTRACTION_TEMPLATE
        .replace("{conversation}", &excerpt.render())
        .replace("{research_objectives}", &objectives)
}

/// Resolves the model's objective string to a configured id.
///
/// Accepts the bare id, the full text, or the id followed by a separator and
/// anything else ("RO1: Understand pricing", "RO1 - ...").
pub fn match_objective(raw: &str, objectives: &[ResearchObjective]) -> Option<String> {
    let needle = text::fold(raw);
    if needle.is_empty() {
        return None;
    }
    for ro in objectives {
        let id = text::fold(&ro.id);
        let body = text::fold(&ro.text);
        if needle == id || needle == body || (!body.is_empty() && needle.ends_with(&body)) {
            return Some(ro.id.clone());
        }
        if let Some(rest) = needle.strip_prefix(&id) {
            if rest.chars().next().is_some_and(|c| !c.is_alphanumeric()) {
                return Some(ro.id.clone());
            }
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedAssignments {
    pub assignments: Vec<TopicAssignment>,
    pub warnings: Vec<ExtractionWarning>,
}

fn as_text(v: Option<&Value>) -> String {
    match v {
        Some(Value::String(s)) => text::normalize(s),
        Some(Value::Null) | None => String::new(),
        Some(other) => text::normalize(&other.to_string()),
    }
}

/// Turns one model response into assignments for `statement`.
pub fn parse_assignments(
    response: &str,
    transcript_id: &TranscriptId,
    statement: &Turn,
    cfg: &ExtractionConfig,
) -> Result<ParsedAssignments, ExtractionError> {
    let idx = statement.index;
    let records = gateway::extract_structured_list(response, RECORD_KEYS).map_err(|source| {
        ExtractionError::Parse {
            statement_index: idx,
            source,
        }
    })?;
    let mut warnings = Vec::new();
    let mut warn = |message: String| {
        tracing::warn!(statement = idx, "{message}");
        warnings.push(ExtractionWarning {
            statement_index: idx,
            message,
        });
    };
    let mut assignments = Vec::new();
    for (pos, rec) in records.iter().enumerate() {
        let topic = as_text(rec.get("topic"));
        let phrase = as_text(rec.get("phrase"));
        if topic.is_empty() || phrase.is_empty() {
            warn(format!("record {pos} dropped: empty topic or phrase"));
            continue;
        }
        if assignments.len() == cfg.max_topics {
            warn(format!(
                "truncated to {} topics; record {pos} and later dropped",
                cfg.max_topics
            ));
            break;
        }
        let raw_ro = as_text(rec.get("research_objective"));
        let research_objective_id = match match_objective(&raw_ro, &cfg.research_objectives) {
            Some(id) => id,
            None => {
                warn(format!(
                    "unmatched research objective `{raw_ro}` for topic `{topic}`"
                ));
                UNMATCHED.to_string()
            }
        };
        let mut a = TopicAssignment {
            id: assignment_id(transcript_id, idx, assignments.len()),
            transcript_id: transcript_id.clone(),
            statement_index: idx,
            topic,
            phrase,
            research_objective_id,
            provenance: Provenance::Ai,
            status: AssignmentStatus::Proposed,
            phrase_grounded: false,
            phrase_span: None,
        };
        a.ground(&statement.text);
        assignments.push(a);
    }
    Ok(ParsedAssignments {
        assignments,
        warnings,
    })
}

/// Runs extraction over every interviewee statement of `t`.
///
/// Statements are processed concurrently up to the gateway's bound and merged
/// back in statement order. Individual failures are collected in the report;
/// the run fails only when the failure fraction exceeds the threshold.
pub fn extract_topics(
    t: &Transcript,
    cfg: &ExtractionConfig,
    gateway: &dyn Gateway,
) -> Result<ExtractionOutcome, ExtractionError> {
    cfg.validate()?;
    let statements = interviewee_statements(t);
    let results = map_bounded(&statements, gateway.concurrency(), |_, statement| {
        let excerpt = context_slice(t, statement.index, cfg.context_turns)
            .expect("interviewee statements are valid context anchors");
        let prompt = build_extraction_prompt(&excerpt, cfg);
        let response = gateway::complete_prompt(gateway, &prompt).map_err(|source| {
            ExtractionError::Gateway {
                statement_index: statement.index,
                source,
            }
        })?;
        parse_assignments(&response, &t.id, statement, cfg)
    });

    let mut assignments = Vec::new();
    let mut warnings = Vec::new();
    let mut errors = Vec::new();
    for (statement, result) in statements.iter().zip(results) {
        match result {
            Ok(parsed) => {
                assignments.extend(parsed.assignments);
                warnings.extend(parsed.warnings);
            }
            Err(e) => {
                let class = match &e {
                    ExtractionError::Gateway { source, .. } => source.class().to_string(),
                    _ => "parse_error".to_string(),
                };
                errors.push(StatementFailure {
                    statement_index: statement.index,
                    class,
                    message: e.to_string(),
                });
            }
        }
    }
    let report = ExtractionReport {
        transcript_id: t.id.clone(),
        statements: statements.len(),
        assignments: assignments.len(),
        grounded: assignments.iter().filter(|a| a.phrase_grounded).count(),
        unmatched_objectives: assignments
            .iter()
            .filter(|a| a.research_objective_id == UNMATCHED)
            .count(),
        warnings,
        errors,
    };
    let failed = report.errors.len();
    if failed > 0 && failed as f64 > cfg.failure_threshold * statements.len() as f64 {
        return Err(ExtractionError::TooManyFailures {
            failed,
            statements: statements.len(),
            threshold: cfg.failure_threshold,
            report: Box::new(report),
        });
    }
    Ok(ExtractionOutcome {
        assignments,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{CompletionRequest, ScriptedStub};
    use crate::transcript::{parse_transcript, ColumnMap, IngestOptions, RawTable, SpeakerRole};
    use proptest::prelude::*;

    fn cfg(n_ro: usize, t: usize) -> ExtractionConfig {
        let ros = (1..=n_ro)
            .map(|i| ResearchObjective::new(format!("RO{i}"), format!("Objective number {i}")))
            .collect();
        ExtractionConfig {
            max_topics: t,
            ..ExtractionConfig::new(ros)
        }
    }

    fn transcript(rows: &[(&str, &str)]) -> Transcript {
        let mut csv = String::from("speaker,text\n");
        for (s, t) in rows {
            csv.push_str(&format!("{s},\"{t}\"\n"));
        }
        parse_transcript(
            &RawTable::from_csv(&csv).unwrap(),
            &IngestOptions {
                mapping: ColumnMap {
                    speaker: "speaker".into(),
                    text: "text".into(),
                    timestamp: None,
                    interviewee: "P".into(),
                },
                participant_label: "P1".into(),
                source_name: None,
            },
        )
        .unwrap()
    }

    fn statement(text: &str) -> Turn {
        Turn {
            index: 3,
            speaker_role: SpeakerRole::Interviewee,
            text: text.into(),
            timestamp: None,
        }
    }

    #[test]
    fn prompt_contains_fixed_instruction_and_objectives() {
        let t = transcript(&[("F", "q1"), ("P", "a1"), ("F", "q2"), ("P", "a2")]);
        let c = cfg(3, 5);
        let ex = context_slice(&t, 3, 4).unwrap();
        let prompt = build_extraction_prompt(&ex, &c);
        assert!(prompt.contains("Extract between (0) ZERO and FIVE(5) TOPICS"));
        let ro_lines = prompt.lines().filter(|l| l.starts_with("RO")).count();
        assert_eq!(ro_lines, 3);
        assert!(prompt.contains("RO2: Objective number 2\n"));
        assert!(!prompt.contains("{conversation}"));
        assert!(
            prompt.contains("INTERVIEWER: q1\nINTERVIEWEE: a1\nINTERVIEWER: q2\nINTERVIEWEE: a2")
        );
    }

    #[test]
    fn zero_context_prompt_has_only_the_statement() {
        let t = transcript(&[("F", "question"), ("P", "the answer")]);
        let ex = context_slice(&t, 1, 0).unwrap();
        let prompt = build_extraction_prompt(&ex, &cfg(1, 5));
        let section = prompt
            .split("## CONVERSATION\n")
            .nth(1)
            .unwrap()
            .split("\n\n## INSTRUCTIONS")
            .next()
            .unwrap();
        assert_eq!(section, "INTERVIEWEE: the answer");
    }

    #[test]
    fn template_is_verbatim() {
        // trailing spaces are part of the template
        assert!(EXTRACTION_TEMPLATE.starts_with(
            "You are an experienced user researcher and you are very familiar with analyzing interview data. \n"
        ));
        assert!(EXTRACTION_TEMPLATE.ends_with("return:\n[]\n"));
    }

    #[test]
    fn empty_response_gives_no_assignments() {
        let p = parse_assignments("[]", &"t1".into(), &statement("hello"), &cfg(1, 5)).unwrap();
        assert!(p.assignments.is_empty());
        assert!(p.warnings.is_empty());
    }

    #[test]
    fn truncates_to_max_topics() {
        let records: Vec<String> = (0..7)
            .map(|i| format!(r#"{{"topic":"T{i}","phrase":"p","research_objective":"RO1"}}"#))
            .collect();
        let resp = format!("[{}]", records.join(","));
        let p = parse_assignments(&resp, &"t1".into(), &statement("p"), &cfg(1, 5)).unwrap();
        assert_eq!(p.assignments.len(), 5);
        assert_eq!(p.assignments[4].topic, "T4");
        assert_eq!(p.warnings.len(), 1);
        assert!(p.warnings[0].message.contains("truncated"));
    }

    #[test]
    fn grounding_flags() {
        let s = statement("Honestly the pricing page confused everyone on my team.");
        let resp = r#"[
            {"topic":"Pricing confusion","phrase":"the pricing page confused everyone","research_objective":"RO1"},
            {"topic":"Team impact","phrase":"the whole team found prices unclear","research_objective":"RO1"}
        ]"#;
        let p = parse_assignments(resp, &"t1".into(), &s, &cfg(1, 5)).unwrap();
        assert!(p.assignments[0].phrase_grounded);
        let span = p.assignments[0].phrase_span.unwrap();
        assert_eq!(
            span.slice(&s.text),
            Some("the pricing page confused everyone")
        );
        assert!(!p.assignments[1].phrase_grounded);
        assert_eq!(p.assignments[1].phrase_span, None);
    }

    #[test]
    fn objective_matching_forms() {
        let ros = cfg(12, 5).research_objectives;
        assert_eq!(match_objective("RO1", &ros).as_deref(), Some("RO1"));
        assert_eq!(
            match_objective("ro1: Objective number 1", &ros).as_deref(),
            Some("RO1")
        );
        assert_eq!(
            match_objective("RO10 - something", &ros).as_deref(),
            Some("RO10")
        );
        assert_eq!(
            match_objective("Objective number 2", &ros).as_deref(),
            Some("RO2")
        );
        assert_eq!(match_objective("RO99", &ros), None);
        assert_eq!(match_objective("", &ros), None);
    }

    #[test]
    fn unmatched_objective_warns_once_each() {
        let resp = r#"[{"topic":"A","phrase":"x","research_objective":"RO7"},
                       {"topic":"B","phrase":"x","research_objective":"Totally different"},
                       {"topic":"C","phrase":"x","research_objective":"RO1"}]"#;
        let p = parse_assignments(resp, &"t1".into(), &statement("x"), &cfg(2, 5)).unwrap();
        let unmatched: Vec<_> = p
            .assignments
            .iter()
            .filter(|a| a.research_objective_id == UNMATCHED)
            .collect();
        assert_eq!(unmatched.len(), 2);
        assert_eq!(
            p.warnings
                .iter()
                .filter(|w| w.message.contains("unmatched"))
                .count(),
            2
        );
    }

    #[test]
    fn parse_failure_carries_statement_anchor() {
        let err = parse_assignments("no json here", &"t1".into(), &statement("x"), &cfg(1, 5))
            .unwrap_err();
        assert!(matches!(
            err,
            ExtractionError::Parse {
                statement_index: 3,
                ..
            }
        ));
    }

    #[test]
    fn config_bounds() {
        assert!(cfg(1, 0).validate().is_err());
        assert!(cfg(1, 6).validate().is_err());
        assert!(cfg(0, 3).validate().is_err());
        assert!(cfg(1, 5).validate().is_ok());
    }

    struct EchoGateway;

    impl Gateway for EchoGateway {
        fn complete(&self, req: &CompletionRequest) -> Result<String, GatewayError> {
            let statement = req
                .prompt
                .split("## CONVERSATION\n")
                .nth(1)
                .and_then(|s| s.split("\n\n## INSTRUCTIONS").next())
                .and_then(|s| s.lines().last())
                .and_then(|l| l.strip_prefix("INTERVIEWEE: "))
                .unwrap_or_default();
            if statement.contains("fail") {
                return Err(GatewayError::BadResponse {
                    payload: "boom".into(),
                });
            }
            Ok(format!(
                r#"[{{"topic":"About {statement}","phrase":"{statement}","research_objective":"RO1"}}]"#
            ))
        }
    }

    #[test]
    fn concatenates_in_statement_order() {
        let t = transcript(&[("F", "q"), ("P", "first"), ("F", "q"), ("P", "second")]);
        let out = extract_topics(&t, &cfg(1, 5), &EchoGateway).unwrap();
        assert_eq!(out.assignments.len(), 2);
        assert_eq!(out.assignments[0].statement_index, 1);
        assert_eq!(out.assignments[1].statement_index, 3);
        assert!(out
            .assignments
            .iter()
            .all(|a| a.provenance == Provenance::Ai && a.status == AssignmentStatus::Proposed));
        assert_eq!(out.report.grounded, 2);
    }

    #[test]
    fn all_empty_responses_succeed() {
        let t = transcript(&[("P", "one"), ("P", "two")]);
        let stub = ScriptedStub::new().with_playback(["[]", "[]"]);
        let out = extract_topics(&t, &cfg(1, 5), &stub).unwrap();
        assert!(out.assignments.is_empty());
        assert_eq!(out.report.statements, 2);
    }

    #[test]
    fn failure_threshold() {
        // 1 of 5 failing is exactly 20%: tolerated
        let rows: Vec<(&str, &str)> = vec![
            ("P", "a"),
            ("P", "b"),
            ("P", "fail c"),
            ("P", "d"),
            ("P", "e"),
        ];
        let out = extract_topics(&transcript(&rows), &cfg(1, 5), &EchoGateway).unwrap();
        assert_eq!(out.report.errors.len(), 1);
        assert_eq!(out.report.errors[0].class, "bad_response");
        assert_eq!(out.assignments.len(), 4);

        let rows: Vec<(&str, &str)> = vec![
            ("P", "a"),
            ("P", "fail b"),
            ("P", "fail c"),
            ("P", "d"),
            ("P", "e"),
        ];
        let err = extract_topics(&transcript(&rows), &cfg(1, 5), &EchoGateway).unwrap_err();
        assert!(matches!(
            err,
            ExtractionError::TooManyFailures {
                failed: 2,
                statements: 5,
                ..
            }
        ));
    }

    proptest! {
        #[test]
        fn never_exceeds_max_topics(t in 1usize..=5, n in 0usize..12) {
            let records: Vec<String> = (0..n)
                .map(|i| format!(r#"{{"topic":"T{i}","phrase":"p{i}","research_objective":"RO{}"}}"#, i % 3))
                .collect();
            let resp = format!("[{}]", records.join(","));
            let p = parse_assignments(&resp, &"t1".into(), &statement("p1 p2"), &cfg(1, t)).unwrap();
            prop_assert!(p.assignments.len() <= t);
            prop_assert_eq!(p.assignments.len(), n.min(t));
            let unmatched = p.assignments.iter().filter(|a| a.research_objective_id == UNMATCHED).count();
            let unmatched_warnings = p.warnings.iter().filter(|w| w.message.starts_with("unmatched")).count();
            prop_assert_eq!(unmatched, unmatched_warnings);
            for a in &p.assignments {
                prop_assert_eq!(a.phrase_grounded, crate::text::fold("p1 p2").contains(&crate::text::fold(&a.phrase)));
            }
        }
    }
}
