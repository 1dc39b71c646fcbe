use std::collections::BTreeMap;

use serde_json::{json, Value};

use super::{CompletionRequest, Gateway, GatewayError};
use crate::text;

/// A theme the responder can recognise: trigger words, topic wordings and
/// the position of the research objective it belongs to.
struct Theme {
    triggers: &'static [&'static str],
    topics: &'static [&'static str],
    objective: usize,
}

const THEMES: &[Theme] = &[
    Theme {
        triggers: &[
            "price",
            "pricing",
            "cost",
            "expensive",
            "budget",
            "billing",
            "invoice",
        ],
        topics: &[
            "pricing concerns",
            "pricing transparency",
            "cost of compute",
            "billing surprises",
        ],
        objective: 2,
    },
    Theme {
        triggers: &[
            "setup",
            "onboard",
            "install",
            "getting started",
            "first week",
        ],
        topics: &["onboarding friction", "setup difficulty", "slow onboarding"],
        objective: 0,
    },
    Theme {
        triggers: &["documentation", "docs", "tutorial", "example"],
        topics: &[
            "documentation gaps",
            "missing examples",
            "outdated documentation",
        ],
        objective: 1,
    },
    Theme {
        triggers: &["gpu", "slow", "latency", "performance", "memory"],
        topics: &[
            "gpu availability",
            "performance bottlenecks",
            "memory limits",
        ],
        objective: 1,
    },
    Theme {
        triggers: &["share", "sharing", "team", "colleague", "handoff"],
        topics: &[
            "sharing results with the team",
            "collaboration overhead",
            "team handoffs",
        ],
        objective: 3,
    },
    Theme {
        triggers: &["trust", "wrong", "accuracy", "accurate", "quality"],
        topics: &["trust in outputs", "accuracy concerns", "output quality"],
        objective: 0,
    },
    Theme {
        triggers: &["support", "ticket", "help desk"],
        topics: &["support responsiveness", "support channels"],
        objective: 1,
    },
    Theme {
        triggers: &["security", "compliance", "permission", "access"],
        topics: &["access control needs", "compliance requirements"],
        objective: 3,
    },
    Theme {
        triggers: &["integrat", "api", "pipeline", "export"],
        topics: &[
            "integration with existing tools",
            "api limitations",
            "export workflows",
        ],
        objective: 0,
    },
];

/// Deterministic offline model for demos and end-to-end tests.
///
/// It recognises the extraction, cluster naming, cluster summary, list
/// comparison and chat prompts and answers each from the prompt content
/// alone: keyword themes for extraction, the most common member topic for
/// names, word overlap for comparisons and verbatim clauses for chat. A
/// small, hash-selected share of extraction answers paraphrase the phrase
/// or cite an objective that does not exist, so runs exercise those paths.
#[derive(Debug, Clone, Copy, Default)]
pub struct SyntheticResponder;

impl SyntheticResponder {
    pub fn new() -> Self {
        Self
    }

    pub fn respond(&self, prompt: &str) -> Option<String> {
        if prompt.contains("## CONVERSATION") && prompt.contains("## RESEARCH OBJECTIVES") {
            Some(extraction(prompt))
        } else if prompt.contains("assign a short label for all the items") {
            Some(cluster_name(&section_json(prompt, "## TOPICS")?))
        } else if prompt.contains("assign a short summary for all the items") {
            Some(cluster_summary(&section_json(prompt, "## TOPICS")?))
        } else if prompt.contains("## LIST_A") {
            Some(compare(
                &section_json(prompt, "## LIST_A")?,
                &section_json(prompt, "## LIST_B")?,
            ))
        } else if prompt.contains("## EVIDENCE") && prompt.contains("## QUESTION") {
            Some(chat(prompt))
        } else {
            None
        }
    }
}

impl Gateway for SyntheticResponder {
    fn complete(&self, req: &CompletionRequest) -> Result<String, GatewayError> {
        req.validate()?;
        self.respond(&req.prompt).ok_or_else(|| {
            GatewayError::InvalidRequest(
                "synthetic responder does not recognise this prompt".into(),
            )
        })
    }

    fn model_id(&self) -> &str {
        "synthetic"
    }
}

fn hash(s: &str) -> u64 {
    u64::from_str_radix(&text::digest(s)[..12], 16).expect("hex digest")
}

/// Lines of a `## HEADING` block, up to the next heading.
fn section<'a>(prompt: &'a str, heading: &str) -> Vec<&'a str> {
    let Some(start) = prompt.find(heading) else {
        return Vec::new();
    };
    prompt[start + heading.len()..]
        .lines()
        .skip(1)
        .take_while(|l| !l.starts_with("## "))
        .filter(|l| !l.trim().is_empty())
        .collect()
}

fn section_json(prompt: &str, heading: &str) -> Option<Vec<String>> {
    serde_json::from_str(section(prompt, heading).join("\n").trim()).ok()
}

/// Sentence pieces of a statement, as they appear in it.
fn clauses(statement: &str) -> Vec<&str> {
    statement
        .split(['.', ',', ';', '?', '!'])
        .map(str::trim)
        .filter(|c| c.split_whitespace().count() >= 2)
        .collect()
}

fn extraction(prompt: &str) -> String {
    let conversation = section(prompt, "## CONVERSATION");
    let statement = conversation
        .last()
        .and_then(|l| l.strip_prefix("INTERVIEWEE: "))
        .unwrap_or("");
    let objectives = section(prompt, "## RESEARCH OBJECTIVES");
    let h = hash(statement);
    let lower = statement.to_lowercase();
    let mut out = Vec::new();
    for (k, theme) in THEMES.iter().enumerate() {
        let Some(trigger) = theme.triggers.iter().find(|t| lower.contains(*t)) else {
            continue;
        };
        let clause = clauses(statement)
            .into_iter()
            .find(|c| c.to_lowercase().contains(trigger))
            .unwrap_or(statement);
        let topic = theme.topics[(h as usize + k) % theme.topics.len()];
        let phrase = if (h >> 8).is_multiple_of(9) {
            format!("they said {}", clause.to_lowercase())
        } else {
            clause.to_string()
        };
        let objective = if (h >> 16).is_multiple_of(11) {
            "RO9: Understand market positioning".to_string()
        } else if objectives.is_empty() {
            String::new()
        } else {
            objectives[theme.objective % objectives.len()].to_string()
        };
        out.push(json!({"topic": topic, "phrase": phrase, "research_objective": objective}));
        if out.len() == 5 {
            break;
        }
    }
    serde_json::to_string_pretty(&Value::Array(out)).expect("json")
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn cluster_name(topics: &[String]) -> String {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for t in topics {
        *counts.entry(t.as_str()).or_insert(0) += 1;
    }
    counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
        .map(|(t, _)| capitalize(t))
        .unwrap_or_default()
}

fn cluster_summary(topics: &[String]) -> String {
    let mut distinct: Vec<&str> = topics.iter().map(String::as_str).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.is_empty() {
        return String::new();
    }
    format!(
        "Participants raised {} related points about {}.",
        topics.len(),
        distinct.into_iter().take(3).collect::<Vec<_>>().join(", ")
    )
}

fn compare(a: &[String], b: &[String]) -> String {
    let ta: Vec<_> = a.iter().map(|s| crate::chat::terms(s)).collect();
    let tb: Vec<_> = b.iter().map(|s| crate::chat::terms(s)).collect();
    let mut used = vec![false; b.len()];
    let mut pairs = Vec::new();
    let mut unique_a = Vec::new();
    for (i, x) in a.iter().enumerate() {
        match (0..b.len()).find(|&j| !used[j] && !ta[i].is_disjoint(&tb[j])) {
            Some(j) => {
                used[j] = true;
                pairs.push(json!([x, b[j]]));
            }
            None => unique_a.push(x.clone()),
        }
    }
    let unique_b: Vec<&String> = b
        .iter()
        .zip(&used)
        .filter(|(_, u)| !**u)
        .map(|(s, _)| s)
        .collect();
    serde_json::to_string_pretty(&json!([{
        "present_in_both_lists": pairs,
        "unique_items_in_list_A": unique_a,
        "unique_items_in_list_B": unique_b,
    }]))
    .expect("json")
}

fn chat(prompt: &str) -> String {
    let question = section(prompt, "## QUESTION").join(" ");
    let wanted = crate::chat::terms(&question);
    let mut quotes = Vec::new();
    let mut who = Vec::new();
    for line in section(prompt, "## EVIDENCE").into_iter().take(3) {
        let Some((id, rest)) = line.strip_prefix('[').and_then(|l| l.split_once("] (")) else {
            continue;
        };
        let Some((source, statement)) = rest.split_once("): ") else {
            continue;
        };
        let parts = clauses(statement);
        let quote = parts
            .iter()
            .find(|c| !crate::chat::terms(c).is_disjoint(&wanted))
            .or(parts.first())
            .copied()
            .unwrap_or(statement);
        quotes.push(json!({"evidence": id, "quote": quote}));
        who.push(source.to_string());
    }
    let answer = if who.is_empty() {
        String::new()
    } else {
        format!("This comes up in {}.", who.join("; "))
    };
    json!({"answer": answer, "quotes": quotes}).to_string()
}
