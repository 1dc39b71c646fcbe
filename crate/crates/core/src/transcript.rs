//! Transcript ingestion and conversational context windows.
//!
//! Transcripts arrive as tabular exports (CSV) or line-delimited JSON
//! records. A [`ColumnMap`] names the speaker and text columns and the
//! speaker value that marks the interviewee; every other speaker value is
//! treated as the interviewer.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::ids::TranscriptId;
use crate::text::{self, hex_digest};

#[derive(Debug, Error, PartialEq)]
pub enum IngestError {
    #[error("missing mapped column `{0}`")]
    MissingColumn(String),
    #[error("no interviewee statements (interviewee value `{0}`)")]
    NoIntervieweeStatements(String),
    #[error("malformed input at record {record}: {message}")]
    Malformed { record: usize, message: String },
    #[error("invalid timestamp `{value}` at record {record}")]
    Timestamp { record: usize, value: String },
}

#[derive(Debug, Error, PartialEq)]
pub enum ContextError {
    #[error("turn index {index} out of range (transcript has {len} turns)")]
    OutOfRange { index: usize, len: usize },
    #[error("turn {0} is not an interviewee statement")]
    NotInterviewee(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeakerRole {
    Interviewer,
    Interviewee,
}

impl SpeakerRole {
    pub fn label(self) -> &'static str {
        match self {
            SpeakerRole::Interviewer => "INTERVIEWER",
            SpeakerRole::Interviewee => "INTERVIEWEE",
        }
    }
}

/// Elapsed time since the start of the recording, millisecond resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Elapsed(u64);

impl Elapsed {
    pub fn from_millis(ms: u64) -> Self {
        Self(ms)
    }

    pub fn as_millis(self) -> u64 {
        self.0
    }
}

impl fmt::Display for Elapsed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ms = self.0 % 1000;
        let total = self.0 / 1000;
        let (h, m, s) = (total / 3600, (total / 60) % 60, total % 60);
        if ms == 0 {
            write!(f, "{h:02}:{m:02}:{s:02}")
        } else {
            write!(f, "{h:02}:{m:02}:{s:02}.{ms:03}")
        }
    }
}

impl FromStr for Elapsed {
    type Err = ();

    /// Accepts `HH:MM:SS[.fff]`, `MM:SS[.fff]` or plain seconds.
    fn from_str(s: &str) -> Result<Self, ()> {
        let s = s.trim();
        if s.is_empty() {
            return Err(());
        }
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() > 3 {
            return Err(());
        }
        let (last, whole) = parts.split_last().ok_or(())?;
        let (secs, frac) = match last.split_once('.') {
            Some((a, b)) => (a, b),
            None => (*last, ""),
        };
        let digits = |v: &str| !v.is_empty() && v.bytes().all(|b| b.is_ascii_digit());
        if !digits(secs) || !(frac.is_empty() || digits(frac)) || frac.len() > 3 {
            return Err(());
        }
        let mut total: u64 = 0;
        for p in whole {
            if !digits(p) {
                return Err(());
            }
            total = total * 60 + p.parse::<u64>().map_err(|_| ())?;
        }
        let secs: u64 = secs.parse().map_err(|_| ())?;
        if !whole.is_empty() && secs >= 60 {
            return Err(());
        }
        total = total * 60 + secs;
        let ms = if frac.is_empty() {
            0
        } else {
            format!("{frac:0<3}").parse::<u64>().map_err(|_| ())?
        };
        Ok(Elapsed(total * 1000 + ms))
    }
}

impl Serialize for Elapsed {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Elapsed {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        raw.parse()
            .map_err(|_| serde::de::Error::custom(format!("invalid elapsed time `{raw}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub index: usize,
    pub speaker_role: SpeakerRole,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<Elapsed>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub id: TranscriptId,
    pub participant_label: String,
    pub turns: Vec<Turn>,
    pub source_meta: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ResearchObjective {
    pub id: String,
    pub text: String,
}

impl ResearchObjective {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ObjectiveError {
    #[error("research objective list is empty")]
    Empty,
    #[error("duplicate research objective id `{0}`")]
    DuplicateId(String),
    #[error("research objective `{0}` has empty id or text")]
    Blank(String),
}

/// Checks id uniqueness and non-empty text; normalizes whitespace.
pub fn validate_objectives(
    objectives: &[ResearchObjective],
) -> Result<Vec<ResearchObjective>, ObjectiveError> {
    if objectives.is_empty() {
        return Err(ObjectiveError::Empty);
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(objectives.len());
    for ro in objectives {
        let id = text::normalize(&ro.id);
        let body = text::normalize(&ro.text);
        if id.is_empty() || body.is_empty() {
            return Err(ObjectiveError::Blank(ro.id.clone()));
        }
        if !seen.insert(id.clone()) {
            return Err(ObjectiveError::DuplicateId(id));
        }
        out.push(ResearchObjective { id, text: body });
    }
    Ok(out)
}

/// Names the columns of a raw transcript export.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub speaker: String,
    pub text: String,
    #[serde(default)]
    pub timestamp: Option<String>,
    /// Speaker value identifying the interviewee.
    pub interviewee: String,
}

impl ColumnMap {
    /// Mapping for the canonical `speaker,text[,timestamp]` format.
    pub fn canonical() -> Self {
        Self {
            speaker: "speaker".into(),
            text: "text".into(),
            timestamp: Some("timestamp".into()),
            interviewee: "interviewee".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputFormat {
    Csv,
    Jsonl,
}

/// A header plus string cells; the common shape of both input formats.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<Option<String>>>,
}

impl RawTable {
    pub fn from_csv(raw: &str) -> Result<Self, IngestError> {
        let raw = raw.strip_prefix('\u{feff}').unwrap_or(raw);
        let mut reader = csv::ReaderBuilder::new()
            .flexible(true)
            .from_reader(raw.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| IngestError::Malformed {
                record: 0,
                message: e.to_string(),
            })?
            .iter()
            .map(|h| h.trim().to_string())
            .collect::<Vec<_>>();
        let mut rows = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| IngestError::Malformed {
                record: i + 1,
                message: e.to_string(),
            })?;
            rows.push(
                (0..headers.len())
                    .map(|c| rec.get(c).map(str::to_string))
                    .collect(),
            );
        }
        Ok(Self { headers, rows })
    }

    /// One JSON object per non-blank line. Headers are the union of keys in
    /// first-seen order.
    pub fn from_jsonl(raw: &str) -> Result<Self, IngestError> {
        let mut headers: Vec<String> = Vec::new();
        let mut objects = Vec::new();
        for (i, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let value: serde_json::Value =
                serde_json::from_str(line).map_err(|e| IngestError::Malformed {
                    record: i + 1,
                    message: e.to_string(),
                })?;
            let serde_json::Value::Object(map) = value else {
                return Err(IngestError::Malformed {
                    record: i + 1,
                    message: "expected a JSON object".into(),
                });
            };
            for key in map.keys() {
                if !headers.contains(key) {
                    headers.push(key.clone());
                }
            }
            objects.push(map);
        }
        let rows = objects
            .into_iter()
            .map(|map| {
                headers
                    .iter()
                    .map(|h| match map.get(h) {
                        None | Some(serde_json::Value::Null) => None,
                        Some(serde_json::Value::String(s)) => Some(s.clone()),
                        Some(other) => Some(other.to_string()),
                    })
                    .collect()
            })
            .collect();
        Ok(Self { headers, rows })
    }

    pub fn parse(raw: &str, format: InputFormat) -> Result<Self, IngestError> {
        match format {
            InputFormat::Csv => Self::from_csv(raw),
            InputFormat::Jsonl => Self::from_jsonl(raw),
        }
    }

    fn column(&self, name: &str) -> Result<usize, IngestError> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::MissingColumn(name.to_string()))
    }
}

/// Everything `parse_transcript` needs besides the raw rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestOptions {
    pub mapping: ColumnMap,
    pub participant_label: String,
    #[serde(default)]
    pub source_name: Option<String>,
}

/// Builds a validated [`Transcript`] from raw rows.
///
/// Rows whose text is empty after normalization are dropped and counted in
/// `source_meta["dropped_empty_rows"]`.
pub fn parse_transcript(raw: &RawTable, opts: &IngestOptions) -> Result<Transcript, IngestError> {
    let map = &opts.mapping;
    let speaker_col = raw.column(&map.speaker)?;
    let text_col = raw.column(&map.text)?;
    let ts_col = map
        .timestamp
        .as_deref()
        .map(|c| raw.column(c))
        .transpose()?;
    let interviewee = text::normalize(&map.interviewee);

    let mut turns = Vec::with_capacity(raw.rows.len());
    let mut dropped = 0usize;
    for (i, row) in raw.rows.iter().enumerate() {
        let cell = |c: usize| row.get(c).cloned().flatten().unwrap_or_default();
        let body = text::normalize(&cell(text_col));
        if body.is_empty() {
            dropped += 1;
            continue;
        }
        let speaker = text::normalize(&cell(speaker_col));
        let speaker_role = if speaker == interviewee {
            SpeakerRole::Interviewee
        } else {
            SpeakerRole::Interviewer
        };
        let timestamp = match ts_col.map(cell) {
            Some(v) if !v.trim().is_empty() => {
                Some(v.parse::<Elapsed>().map_err(|_| IngestError::Timestamp {
                    record: i + 1,
                    value: v.clone(),
                })?)
            }
            _ => None,
        };
        turns.push(Turn {
            index: turns.len(),
            speaker_role,
            text: body,
            timestamp,
        });
    }
    if !turns
        .iter()
        .any(|t| t.speaker_role == SpeakerRole::Interviewee)
    {
        return Err(IngestError::NoIntervieweeStatements(interviewee));
    }

    let participant_label = text::normalize(&opts.participant_label);
    let mut source_meta = BTreeMap::new();
    source_meta.insert("dropped_empty_rows".to_string(), dropped.to_string());
    if let Some(name) = &opts.source_name {
        source_meta.insert("filename".to_string(), name.clone());
    }
    if let Some(last) = turns.iter().rev().find_map(|t| t.timestamp) {
        source_meta.insert("duration".to_string(), last.to_string());
    }
    let id = transcript_id(&participant_label, &turns);
    Ok(Transcript {
        id,
        participant_label,
        turns,
        source_meta,
    })
}

fn transcript_id(participant: &str, turns: &[Turn]) -> TranscriptId {
    let mut buf = String::new();
    buf.push_str(participant);
    for t in turns {
        buf.push('\u{1e}');
        buf.push_str(t.speaker_role.label());
        buf.push('\u{1f}');
        buf.push_str(&t.text);
    }
    let hex = hex_digest(buf.as_bytes());
    TranscriptId::new(format!("t{}", &hex[..12]))
}

/// Renders turns in the canonical `speaker,text,timestamp` CSV format.
pub fn to_canonical_csv(t: &Transcript) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["speaker", "text", "timestamp"])
        .expect("in-memory write");
    for turn in &t.turns {
        let speaker = match turn.speaker_role {
            SpeakerRole::Interviewer => "interviewer",
            SpeakerRole::Interviewee => "interviewee",
        };
        let ts = turn.timestamp.map(|e| e.to_string()).unwrap_or_default();
        w.write_record([speaker, turn.text.as_str(), ts.as_str()])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

impl Transcript {
    /// Checks the structural invariants of a transcript document.
    pub fn validate(&self) -> Result<(), String> {
        for (i, turn) in self.turns.iter().enumerate() {
            if turn.index != i {
                return Err(format!("turn {i} carries index {}", turn.index));
            }
            if turn.text.trim().is_empty() {
                return Err(format!("turn {i} has empty text"));
            }
        }
        Ok(())
    }

    pub fn turn(&self, index: usize) -> Option<&Turn> {
        self.turns.get(index)
    }

    pub fn is_statement(&self, index: usize) -> bool {
        self.turn(index)
            .is_some_and(|t| t.speaker_role == SpeakerRole::Interviewee)
    }
}

/// The interviewee turns of `t`, in transcript order.
pub fn interviewee_statements(t: &Transcript) -> Vec<&Turn> {
    t.turns
        .iter()
        .filter(|turn| turn.speaker_role == SpeakerRole::Interviewee)
        .collect()
}

/// A statement together with up to `c` preceding turns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConversationExcerpt<'a> {
    pub turns: &'a [Turn],
}

impl ConversationExcerpt<'_> {
    pub fn statement(&self) -> &Turn {
        self.turns
            .last()
            .expect("excerpt always holds the statement")
    }

    /// `ROLE: text` lines, oldest first.
    pub fn render(&self) -> String {
        self.turns
            .iter()
            .map(|t| format!("{}: {}", t.speaker_role.label(), t.text))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

pub fn context_slice(
    t: &Transcript,
    statement_index: usize,
    c: usize,
) -> Result<ConversationExcerpt<'_>, ContextError> {
    let turn = t.turn(statement_index).ok_or(ContextError::OutOfRange {
        index: statement_index,
        len: t.turns.len(),
    })?;
    if turn.speaker_role != SpeakerRole::Interviewee {
        return Err(ContextError::NotInterviewee(statement_index));
    }
    let start = statement_index - c.min(statement_index);
    Ok(ConversationExcerpt {
        turns: &t.turns[start..=statement_index],
    })
}
