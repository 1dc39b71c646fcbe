//! Spreadsheet round-trip for offline review.
//!
//! One row per non-rejected assignment. Q4 and Q5 belong to the cluster and
//! are repeated on each of its rows; on import every row of a cluster must
//! agree on them. Row numbers in errors are spreadsheet line numbers, so the
//! header is row 1.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ClusterReview, ReviewRecord};
use crate::ids::{AssignmentId, ClusterId};
use crate::state::ProjectState;

pub const REVIEW_COLUMNS: [&str; 20] = [
    "Assignment ID",
    "Reviewer",
    "Participant",
    "Statement #",
    "Statement",
    "Topic",
    "Phrase",
    "RO",
    "Cluster ID",
    "TCN",
    "TCS",
    "Q1",
    "Q2",
    "Q3",
    "Q4",
    "Q5",
    "Accept AI Analysis? (Yes/No)",
    "Revised Topic",
    "Revised RO",
    "Revised TCN",
];

const ASSIGNMENT: usize = 0;
const REVIEWER: usize = 1;
const CLUSTER: usize = 8;
const Q1: usize = 11;
const Q4: usize = 14;
const Q5: usize = 15;
const ACCEPT: usize = 16;
const REVISED_TOPIC: usize = 17;
const REVISED_RO: usize = 18;
const REVISED_TCN: usize = 19;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowError {
    pub row: usize,
    pub column: String,
    pub message: String,
}

impl std::fmt::Display for RowError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "row {}, {}: {}", self.row, self.column, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImportedReviews {
    pub records: Vec<ReviewRecord>,
    pub cluster_reviews: Vec<ClusterReview>,
    /// Sheet row of each entry in `records`.
    pub record_rows: Vec<usize>,
    /// Sheet row that first rated each entry in `cluster_reviews`.
    pub cluster_review_rows: Vec<usize>,
}

fn rating_cell(v: Option<u8>) -> String {
    v.map(|r| r.to_string()).unwrap_or_default()
}

/// Writes the review sheet for `reviewer`, pre-filled with any judgements
/// that reviewer already recorded.
pub fn export_review_table(state: &ProjectState, reviewer: &str) -> String {
    let mut rows: Vec<_> = state
        .assignments
        .values()
        .filter(|a| !a.is_rejected())
        .collect();
    rows.sort_by(|a, b| {
        let pa = state
            .transcripts
            .get(&a.transcript_id)
            .map(|t| &t.participant_label);
        let pb = state
            .transcripts
            .get(&b.transcript_id)
            .map(|t| &t.participant_label);
        (pa, &a.transcript_id, a.statement_index, &a.id).cmp(&(
            pb,
            &b.transcript_id,
            b.statement_index,
            &b.id,
        ))
    });
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(REVIEW_COLUMNS).expect("in-memory write");
    for a in rows {
        let t = state.transcripts.get(&a.transcript_id);
        let statement = t
            .and_then(|t| t.turn(a.statement_index))
            .map(|turn| turn.text.as_str());
        let cluster = state.cluster_of(&a.id);
        let review = state.reviews.get(&(reviewer.to_string(), a.id.clone()));
        let cluster_review = cluster.and_then(|c| {
            state
                .cluster_reviews
                .get(&(reviewer.to_string(), c.id.clone()))
        });
        let record = [
            a.id.to_string(),
            reviewer.to_string(),
            t.map(|t| t.participant_label.clone()).unwrap_or_default(),
            a.statement_index.to_string(),
            statement.unwrap_or_default().to_string(),
            a.topic.clone(),
            a.phrase.clone(),
            a.research_objective_id.clone(),
            cluster.map(|c| c.id.to_string()).unwrap_or_default(),
            cluster.map(|c| c.name.clone()).unwrap_or_default(),
            cluster.map(|c| c.summary.clone()).unwrap_or_default(),
            rating_cell(review.map(|r| r.q1_topic_match)),
            rating_cell(review.map(|r| r.q2_ro_match)),
            rating_cell(review.map(|r| r.q3_topic_tcn_match)),
            rating_cell(cluster_review.map(|r| r.q4_tcn_representative)),
            rating_cell(cluster_review.map(|r| r.q5_tcs_representative)),
            review
                .map(|r| if r.accept_ai { "Yes" } else { "No" }.to_string())
                .unwrap_or_default(),
            review
                .and_then(|r| r.revised_topic.clone())
                .unwrap_or_default(),
            review
                .and_then(|r| r.revised_ro.clone())
                .unwrap_or_default(),
            review
                .and_then(|r| r.revised_tcn.clone())
                .unwrap_or_default(),
        ];
        w.write_record(&record).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

struct Row<'a> {
    line: usize,
    cells: Vec<&'a str>,
    errors: &'a mut Vec<RowError>,
}

impl Row<'_> {
    fn cell(&self, col: usize) -> &str {
        self.cells.get(col).map(|s| s.trim()).unwrap_or("")
    }

    fn error(&mut self, col: usize, message: impl Into<String>) {
        self.errors.push(RowError {
            row: self.line,
            column: REVIEW_COLUMNS[col].to_string(),
            message: message.into(),
        });
    }

    fn rating(&mut self, col: usize) -> Option<u8> {
        let raw = self.cell(col).to_string();
        if raw.is_empty() {
            self.error(col, "rating is required");
            return None;
        }
        match raw.parse::<u8>() {
            Ok(v) if (1..=5).contains(&v) => Some(v),
            _ => {
                self.error(col, format!("rating must be 1 to 5, got `{raw}`"));
                None
            }
        }
    }

    fn optional(&self, col: usize) -> Option<String> {
        let v = crate::text::normalize(self.cell(col));
        (!v.is_empty()).then_some(v)
    }
}

fn parse_accept(raw: &str) -> Option<bool> {
    match raw.trim().to_lowercase().as_str() {
        "yes" | "y" | "true" | "1" => Some(true),
        "no" | "n" | "false" | "0" => Some(false),
        _ => None,
    }
}

/// Sheet column holding a review field, for reporting errors found after
/// import.
pub fn column_for_field(field: &str) -> &'static str {
    REVIEW_COLUMNS[review_field_column(field)]
}

fn review_field_column(field: &str) -> usize {
    match field {
        "reviewer_id" => REVIEWER,
        "q1_topic_match" => Q1,
        "q2_ro_match" => Q1 + 1,
        "q3_topic_tcn_match" => Q1 + 2,
        "revised_topic" => REVISED_TOPIC,
        "revised_ro" => REVISED_RO,
        "revised_tcn" => REVISED_TCN,
        "q4_tcn_representative" => Q4,
        "q5_tcs_representative" => Q5,
        _ => ACCEPT,
    }
}

/// Parses a filled-in review sheet. Rows with no judgement at all are
/// skipped. Every invalid row is reported; nothing is returned unless the
/// whole sheet is valid.
pub fn import_review_table(
    raw: &str,
    default_reviewer: Option<&str>,
) -> Result<ImportedReviews, Vec<RowError>> {
    let (out, errors) = parse_review_table(raw, default_reviewer);
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(errors)
    }
}

/// Like [`import_review_table`], but returns the valid rows alongside the
/// errors so callers can check them further and report everything at once.
pub fn parse_review_table(
    raw: &str,
    default_reviewer: Option<&str>,
) -> (ImportedReviews, Vec<RowError>) {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(raw.as_bytes());
    let mut errors = Vec::new();
    let headers: Vec<String> = match reader.headers() {
        Ok(h) => h.iter().map(|s| s.trim().to_string()).collect(),
        Err(e) => {
            let error = RowError {
                row: 1,
                column: String::new(),
                message: e.to_string(),
            };
            return (ImportedReviews::default(), vec![error]);
        }
    };
    let mut positions = Vec::with_capacity(REVIEW_COLUMNS.len());
    for col in REVIEW_COLUMNS {
        match headers.iter().position(|h| h.eq_ignore_ascii_case(col)) {
            Some(p) => positions.push(p),
            None => errors.push(RowError {
                row: 1,
                column: col.to_string(),
                message: "missing column".into(),
            }),
        }
    }
    if !errors.is_empty() {
        return (ImportedReviews::default(), errors);
    }

    let mut out = ImportedReviews::default();
    let mut cluster_ratings: BTreeMap<(String, ClusterId), (u8, u8, usize)> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                errors.push(RowError {
                    row: line,
                    column: String::new(),
                    message: e.to_string(),
                });
                continue;
            }
        };
        let cells: Vec<&str> = positions
            .iter()
            .map(|&p| record.get(p).unwrap_or(""))
            .collect();
        let mut row = Row {
            line,
            cells,
            errors: &mut errors,
        };
        let judged = [
            Q1,
            Q1 + 1,
            Q1 + 2,
            Q4,
            Q5,
            ACCEPT,
            REVISED_TOPIC,
            REVISED_RO,
            REVISED_TCN,
        ]
        .iter()
        .any(|&c| !row.cell(c).is_empty());
        if !judged {
            continue;
        }
        let reviewer = match (row.optional(REVIEWER), default_reviewer) {
            (Some(r), _) => r,
            (None, Some(d)) => d.to_string(),
            (None, None) => {
                row.error(REVIEWER, "reviewer is required");
                continue;
            }
        };
        let assignment = row.cell(ASSIGNMENT).to_string();
        if assignment.is_empty() {
            row.error(ASSIGNMENT, "assignment id is required");
            continue;
        }
        let assignment_judged = [
            Q1,
            Q1 + 1,
            Q1 + 2,
            ACCEPT,
            REVISED_TOPIC,
            REVISED_RO,
            REVISED_TCN,
        ]
        .iter()
        .any(|&c| !row.cell(c).is_empty());
        if assignment_judged {
            let q1 = row.rating(Q1);
            let q2 = row.rating(Q1 + 1);
            let q3 = row.rating(Q1 + 2);
            let accept = match parse_accept(row.cell(ACCEPT)) {
                Some(v) => Some(v),
                None => {
                    let raw = row.cell(ACCEPT).to_string();
                    row.error(ACCEPT, format!("expected Yes or No, got `{raw}`"));
                    None
                }
            };
            if let (Some(q1), Some(q2), Some(q3), Some(accept)) = (q1, q2, q3, accept) {
                let r = ReviewRecord {
                    reviewer_id: reviewer.clone(),
                    assignment_id: AssignmentId::new(assignment),
                    q1_topic_match: q1,
                    q2_ro_match: q2,
                    q3_topic_tcn_match: q3,
                    accept_ai: accept,
                    revised_topic: row.optional(REVISED_TOPIC),
                    revised_ro: row.optional(REVISED_RO),
                    revised_tcn: row.optional(REVISED_TCN),
                }
                .normalized();
                match r.validate() {
                    Ok(()) => {
                        out.records.push(r);
                        out.record_rows.push(line);
                    }
                    Err(e) => {
                        let col = e.field_name().map_or(ACCEPT, review_field_column);
                        row.error(col, e.to_string());
                    }
                }
            }
        }
        let (q4_raw, q5_raw) = (row.cell(Q4).is_empty(), row.cell(Q5).is_empty());
        if q4_raw && q5_raw {
            continue;
        }
        let cluster = row.cell(CLUSTER).to_string();
        if cluster.is_empty() {
            row.error(CLUSTER, "cluster id is required for Q4 and Q5");
            continue;
        }
        let (Some(q4), Some(q5)) = (row.rating(Q4), row.rating(Q5)) else {
            continue;
        };
        let key = (reviewer, ClusterId::new(cluster));
        match cluster_ratings.get(&key) {
            Some(&(p4, p5, first)) if (p4, p5) != (q4, q5) => {
                row.error(
                    Q4,
                    format!("Q4/Q5 differ from row {first} for the same cluster"),
                );
            }
            Some(_) => {}
            None => {
                cluster_ratings.insert(key, (q4, q5, line));
            }
        }
    }
    for ((reviewer_id, cluster_id), (q4, q5, first)) in cluster_ratings {
        out.cluster_reviews.push(ClusterReview {
            reviewer_id,
            cluster_id,
            q4_tcn_representative: q4,
            q5_tcs_representative: q5,
        });
        out.cluster_review_rows.push(first);
    }
    (out, errors)
}
