//! Coder agreement: topic-list comparison, Jaccard index and Welch's t-test.

mod welch;

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::gateway::{self, map_bounded, Gateway, GatewayError};
use crate::text;

pub use welch::{
    ln_gamma, regularized_incomplete_beta, student_t_two_sided, welch_t, welch_t_from_summary,
    Summary, WelchResult,
};

const COMPARE_TEMPLATE: &str = include_str!("../prompts/compare_lists.txt");

#[derive(Debug, Error, PartialEq)]
pub enum AgreementError {
    #[error("Jaccard index is undefined when both topic lists are empty")]
    Undefined,
    #[error("sample of size {0} is too small (need at least 2)")]
    SampleTooSmall(usize),
    #[error("both samples have zero variance but different means")]
    DegenerateVariance,
    #[error("standard deviation must be non-negative")]
    NegativeSd,
    #[error("non-finite input")]
    NonFinite,
    #[error("semantic comparison failed: {message}")]
    Semantic { message: String, raw: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("population `{label}` has {defined} statements with a defined Jaccard index (need at least 2)")]
    TooFewStatements { label: String, defined: usize },
    #[error("expected one or two populations, got {0}")]
    Populations(usize),
    #[error("semantic comparison needs a gateway")]
    NoGateway,
    #[error("coder file: {0}")]
    CoderFile(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    Semantic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicListComparison {
    pub matched_pairs: Vec<(String, String)>,
    pub unique_a: Vec<String>,
    pub unique_b: Vec<String>,
    pub method: Method,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl TopicListComparison {
    /// Checks that every input topic appears exactly once across the pairs
    /// and unique lists, as a multiset under case folding.
    pub fn covers(&self, a: &[String], b: &[String]) -> bool {
        fn bag<'a>(items: impl Iterator<Item = &'a String>) -> BTreeMap<String, usize> {
            let mut m = BTreeMap::new();
            for i in items {
                *m.entry(text::fold(i)).or_insert(0) += 1;
            }
            m
        }
        let got_a = bag(self
            .matched_pairs
            .iter()
            .map(|p| &p.0)
            .chain(&self.unique_a));
        let got_b = bag(self
            .matched_pairs
            .iter()
            .map(|p| &p.1)
            .chain(&self.unique_b));
        got_a == bag(a.iter()) && got_b == bag(b.iter())
    }
}

/// Pairs topics whose folded forms are equal, greedily in input order.
pub fn compare_exact(a: &[String], b: &[String]) -> TopicListComparison {
    let mut used = vec![false; b.len()];
    let folded_b: Vec<String> = b.iter().map(|s| text::fold(s)).collect();
    let mut matched_pairs = Vec::new();
    let mut unique_a = Vec::new();
    for x in a {
        let fx = text::fold(x);
        match (0..b.len()).find(|&j| !used[j] && folded_b[j] == fx) {
            Some(j) => {
                used[j] = true;
                matched_pairs.push((x.clone(), b[j].clone()));
            }
            None => unique_a.push(x.clone()),
        }
    }
    let unique_b = b
        .iter()
        .zip(&used)
        .filter(|(_, u)| !**u)
        .map(|(s, _)| s.clone())
        .collect();
    TopicListComparison {
        matched_pairs,
        unique_a,
        unique_b,
        method: Method::Exact,
        warnings: Vec::new(),
    }
}

pub fn render_compare_prompt(a: &[String], b: &[String]) -> String {
    let json = |v: &[String]| serde_json::to_string(v).expect("strings serialize");
    COMPARE_TEMPLATE
        .replace("{list_A}", &json(a))
        .replace("{list_B}", &json(b))
}

/// The example in the comparison prompt leaves two keys unterminated, and
/// models sometimes copy that. Close them before parsing.
fn repair_keys(raw: &str) -> String {
    raw.replace("\"unique_items_in_list_A:", "\"unique_items_in_list_A\":")
        .replace("\"unique_items_in_list_B:", "\"unique_items_in_list_B\":")
}

fn parse_comparison_value(raw: &str) -> Option<Value> {
    let repaired = repair_keys(raw);
    let stripped = repaired
        .trim()
        .trim_start_matches("```json")
        .trim_start_matches("```")
        .trim_end_matches("```")
        .trim();
    let candidates = [
        Some(stripped),
        stripped
            .find('[')
            .zip(stripped.rfind(']'))
            .map(|(s, e)| &stripped[s..=e]),
        stripped
            .find('{')
            .zip(stripped.rfind('}'))
            .map(|(s, e)| &stripped[s..=e]),
    ];
    for c in candidates.into_iter().flatten() {
        if let Ok(v) = serde_json::from_str::<Value>(c) {
            let v = match v {
                Value::Array(mut items) if items.len() == 1 && items[0].is_object() => {
                    items.remove(0)
                }
                other => other,
            };
            if v.is_object() {
                return Some(v);
            }
        }
    }
    None
}

/// Remaining, unclaimed occurrences of each folded topic.
struct Pool<'a> {
    items: &'a [String],
    taken: Vec<bool>,
}

impl<'a> Pool<'a> {
    fn new(items: &'a [String]) -> Self {
        Self {
            items,
            taken: vec![false; items.len()],
        }
    }

    fn contains(&self, s: &str) -> bool {
        let f = text::fold(s);
        self.items.iter().any(|i| text::fold(i) == f)
    }

    /// Claims one free occurrence, returning the caller's original spelling.
    fn take(&mut self, s: &str) -> Option<String> {
        let f = text::fold(s);
        let j =
            (0..self.items.len()).find(|&j| !self.taken[j] && text::fold(&self.items[j]) == f)?;
        self.taken[j] = true;
        Some(self.items[j].clone())
    }

    fn missing(&self) -> Vec<&String> {
        self.items
            .iter()
            .zip(&self.taken)
            .filter(|(_, t)| !**t)
            .map(|(s, _)| s)
            .collect()
    }
}

fn strings(v: Option<&Value>) -> Result<Vec<String>, String> {
    match v {
        None | Some(Value::Null) => Ok(Vec::new()),
        Some(Value::Array(items)) => items
            .iter()
            .map(|i| {
                i.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| format!("non-string item {i}"))
            })
            .collect(),
        Some(other) => Err(format!("expected a list, got {other}")),
    }
}

/// Validates a parsed model answer against the inputs and repairs what can
/// be repaired: reversed pairs are flipped, and a topic listed both in a
/// pair and as unique keeps only its pair. Items the model invented or
/// left out make the answer unusable.
pub fn reconcile_semantic(
    raw: &str,
    a: &[String],
    b: &[String],
) -> Result<TopicListComparison, AgreementError> {
    let fail = |message: String| AgreementError::Semantic {
        message,
        raw: raw.to_string(),
    };
    let v = parse_comparison_value(raw)
        .ok_or_else(|| fail("response is not a comparison object".into()))?;
    let pairs = match v.get("present_in_both_lists") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(items)) => items.clone(),
        Some(other) => {
            return Err(fail(format!(
                "present_in_both_lists is not a list: {other}"
            )))
        }
    };
    let listed_a = strings(v.get("unique_items_in_list_A")).map_err(&fail)?;
    let listed_b = strings(v.get("unique_items_in_list_B")).map_err(&fail)?;

    let mut pool_a = Pool::new(a);
    let mut pool_b = Pool::new(b);
    let mut out = TopicListComparison {
        matched_pairs: Vec::new(),
        unique_a: Vec::new(),
        unique_b: Vec::new(),
        method: Method::Semantic,
        warnings: Vec::new(),
    };
    for p in pairs {
        let pair = strings(Some(&p)).map_err(&fail)?;
        let [x, y] = <[String; 2]>::try_from(pair)
            .map_err(|p| fail(format!("pair must have two items: {p:?}")))?;
        let (x, y) = if pool_a.contains(&x) && pool_b.contains(&y) {
            (x, y)
        } else if pool_a.contains(&y) && pool_b.contains(&x) {
            out.warnings
                .push(format!("pair (`{x}`, `{y}`) was reversed"));
            (y, x)
        } else {
            return Err(fail(format!(
                "pair (`{x}`, `{y}`) does not name one topic from each list"
            )));
        };
        match (pool_a.take(&x), pool_b.take(&y)) {
            (Some(ax), Some(by)) => out.matched_pairs.push((ax, by)),
            (ax, by) => {
                // one side is already used by an earlier pair; keep that pair
                // and return any newly claimed side to the unique list
                out.warnings.push(format!(
                    "pair (`{x}`, `{y}`) reuses a matched topic and was dropped"
                ));
                out.unique_a.extend(ax);
                out.unique_b.extend(by);
            }
        }
    }
    for (listed, pool, unique, side) in [
        (&listed_a, &mut pool_a, &mut out.unique_a, "A"),
        (&listed_b, &mut pool_b, &mut out.unique_b, "B"),
    ] {
        for item in listed {
            if !pool.contains(item) {
                return Err(fail(format!("`{item}` is not in list {side}")));
            }
            match pool.take(item) {
                Some(original) => unique.push(original),
                None => out.warnings.push(format!(
                    "`{item}` listed as unique to {side} but already matched; kept as matched"
                )),
            }
        }
        let missing = pool.missing();
        if !missing.is_empty() {
            return Err(fail(format!(
                "list {side} items missing from the answer: {missing:?}"
            )));
        }
    }
    debug_assert!(out.covers(a, b));
    Ok(out)
}

/// Compares two topic lists with the model. An empty side needs no model
/// call: everything on the other side is unique.
pub fn compare_semantic(
    a: &[String],
    b: &[String],
    gateway: &dyn Gateway,
) -> Result<TopicListComparison, AgreementError> {
    if a.is_empty() || b.is_empty() {
        return Ok(TopicListComparison {
            matched_pairs: Vec::new(),
            unique_a: a.to_vec(),
            unique_b: b.to_vec(),
            method: Method::Semantic,
            warnings: Vec::new(),
        });
    }
    let raw = gateway::complete_prompt(gateway, &render_compare_prompt(a, b))?;
    let c = reconcile_semantic(&raw, a, b)?;
    for w in &c.warnings {
        tracing::warn!("{w}");
    }
    Ok(c)
}

/// |matched| / (|matched| + |unique_a| + |unique_b|).
pub fn jaccard(c: &TopicListComparison) -> Result<f64, AgreementError> {
    let m = c.matched_pairs.len();
    let total = m + c.unique_a.len() + c.unique_b.len();
    if total == 0 {
        return Err(AgreementError::Undefined);
    }
    Ok(m as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementStats {
    pub per_statement_jaccard: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator).
    pub std_dev: f64,
    pub n: usize,
    /// Statements where neither coder assigned a topic.
    pub excluded_both_empty: usize,
}

impl AgreementStats {
    pub fn from_scores(
        scores: Vec<f64>,
        excluded_both_empty: usize,
    ) -> Result<Self, AgreementError> {
        let s = Summary::of(&scores)?;
        Ok(Self {
            n: scores.len(),
            per_statement_jaccard: scores,
            mean: s.mean,
            std_dev: s.sd,
            excluded_both_empty,
        })
    }
}

/// Two coders' topics for one statement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatementPairing {
    pub statement: String,
    pub a: Vec<String>,
    pub b: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Population {
    pub label: String,
    pub pairings: Vec<StatementPairing>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatementResult {
    pub statement: String,
    /// Absent when both coders left the statement empty.
    pub jaccard: Option<f64>,
    pub comparison: TopicListComparison,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationReport {
    pub label: String,
    pub stats: AgreementStats,
    pub statements: Vec<StatementResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub method: Method,
    pub populations: Vec<PopulationReport>,
    /// Present when two populations are compared.
    pub welch: Option<WelchResult>,
}

fn compare(
    p: &StatementPairing,
    method: Method,
    gateway: Option<&dyn Gateway>,
) -> Result<TopicListComparison, AgreementError> {
    match method {
        Method::Exact => Ok(compare_exact(&p.a, &p.b)),
        Method::Semantic => compare_semantic(&p.a, &p.b, gateway.ok_or(AgreementError::NoGateway)?),
    }
}

/// Scores every statement of one or two populations and, with two,
/// compares their Jaccard distributions with Welch's t-test.
pub fn agreement_report(
    populations: &[Population],
    method: Method,
    gateway: Option<&dyn Gateway>,
) -> Result<AgreementReport, AgreementError> {
    if !(1..=2).contains(&populations.len()) {
        return Err(AgreementError::Populations(populations.len()));
    }
    if method == Method::Semantic && gateway.is_none() {
        return Err(AgreementError::NoGateway);
    }
    let workers = gateway.map_or(1, |g| g.concurrency());
    let mut reports = Vec::new();
    for pop in populations {
        let results = map_bounded(&pop.pairings, workers, |_, p| compare(p, method, gateway));
        let mut statements = Vec::with_capacity(results.len());
        let mut scores = Vec::new();
        let mut excluded = 0;
        for (p, r) in pop.pairings.iter().zip(results) {
            let comparison = r?;
            let score = match jaccard(&comparison) {
                Ok(j) => {
                    scores.push(j);
                    Some(j)
                }
                Err(AgreementError::Undefined) => {
                    excluded += 1;
                    None
                }
                Err(e) => return Err(e),
            };
            statements.push(StatementResult {
                statement: p.statement.clone(),
                jaccard: score,
                comparison,
            });
        }
        let defined = scores.len();
        let stats = AgreementStats::from_scores(scores, excluded).map_err(|_| {
            AgreementError::TooFewStatements {
                label: pop.label.clone(),
                defined,
            }
        })?;
        reports.push(PopulationReport {
            label: pop.label.clone(),
            stats,
            statements,
        });
    }
    let welch = match reports.as_slice() {
        [a, b] => Some(welch_t(
            &a.stats.per_statement_jaccard,
            &b.stats.per_statement_jaccard,
        )?),
        _ => None,
    };
    Ok(AgreementReport {
        method,
        populations: reports,
        welch,
    })
}

/// Plain-text table: one line per population, then the t-test.
pub fn render_report_text(r: &AgreementReport) -> String {
    let mut s = String::new();
    let width = r
        .populations
        .iter()
        .map(|p| p.label.len())
        .max()
        .unwrap_or(0)
        .max(10);
    let _ = writeln!(
        s,
        "{:<width$}  {:>5}  {:>6}  {:>8}  {:>8}",
        "population", "n", "mean", "std.dev", "excluded"
    );
    for p in &r.populations {
        let _ = writeln!(
            s,
            "{:<width$}  {:>5}  {:>6.3}  {:>8.3}  {:>8}",
            p.label, p.stats.n, p.stats.mean, p.stats.std_dev, p.stats.excluded_both_empty
        );
    }
    if let Some(w) = &r.welch {
        let _ = writeln!(
            s,
            "Welch's t-test: t = {:.3}, df = {:.2}, p = {:.4}",
            w.t_statistic, w.degrees_of_freedom, w.p_value
        );
    }
    s
}

/// Per-statement table for one population, tab-separated.
pub fn render_statement_table(p: &PopulationReport) -> String {
    let mut s = String::from("statement\tmatched\tunique_a\tunique_b\tjaccard\n");
    for st in &p.statements {
        let j = st
            .jaccard
            .map_or_else(|| "excluded".to_string(), |j| format!("{j:.4}"));
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}",
            st.statement,
            st.comparison.matched_pairs.len(),
            st.comparison.unique_a.len(),
            st.comparison.unique_b.len(),
            j
        );
    }
    s
}

/// Reads a coder file: CSV with `statement` and `topic` columns, one row per
/// topic. A row with an empty topic records a statement the coder saw but
/// left uncoded.
pub fn load_coder_csv(raw: &str) -> Result<BTreeMap<String, Vec<String>>, AgreementError> {
    let mut reader = csv::Reader::from_reader(raw.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| AgreementError::CoderFile(e.to_string()))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(name))
            .ok_or_else(|| AgreementError::CoderFile(format!("missing `{name}` column")))
    };
    let (sc, tc) = (col("statement")?, col("topic")?);
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| AgreementError::CoderFile(format!("row {}: {e}", i + 2)))?;
        let statement = text::normalize(rec.get(sc).unwrap_or(""));
        if statement.is_empty() {
            return Err(AgreementError::CoderFile(format!(
                "row {}: empty statement",
                i + 2
            )));
        }
        let topic = text::normalize(rec.get(tc).unwrap_or(""));
        let entry = out.entry(statement).or_default();
        if !topic.is_empty() {
            entry.push(topic);
        }
    }
    Ok(out)
}

/// Aligns two coders by statement key; a statement only one coder saw
/// counts as empty for the other.
pub fn pair_coders(
    a: &BTreeMap<String, Vec<String>>,
    b: &BTreeMap<String, Vec<String>>,
) -> Vec<StatementPairing> {
    let mut keys: Vec<&String> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();
    let empty = Vec::new();
    keys.into_iter()
        .map(|k| StatementPairing {
            statement: k.clone(),
            a: a.get(k).unwrap_or(&empty).clone(),
            b: b.get(k).unwrap_or(&empty).clone(),
        })
        .collect()
}

/// Groups topic strings by statement key, for building pairings from
/// in-project assignments.
pub fn group_topics<'a>(
    items: impl IntoIterator<Item = (String, &'a str)>,
) -> BTreeMap<String, Vec<String>> {
    let mut m: HashMap<String, Vec<String>> = HashMap::new();
    for (k, t) in items {
        m.entry(k).or_default().push(t.to_string());
    }
    m.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ScriptedStub;
    use proptest::prelude::*;

    fn v(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn exact_examples() {
        let c = compare_exact(&v(&["X", "Y"]), &v(&["y", "Z"]));
        assert_eq!(c.matched_pairs, vec![("Y".to_string(), "y".to_string())]);
        assert_eq!(c.unique_a, v(&["X"]));
        assert_eq!(c.unique_b, v(&["Z"]));
        let same = compare_exact(&v(&["a", "b"]), &v(&["a", "b"]));
        assert_eq!(jaccard(&same), Ok(1.0));
        let disjoint = compare_exact(&v(&["a"]), &v(&["b"]));
        assert_eq!(jaccard(&disjoint), Ok(0.0));
        assert_eq!(
            jaccard(&compare_exact(&[], &[])),
            Err(AgreementError::Undefined)
        );
    }

    #[test]
    fn jaccard_hand_value() {
        let c = TopicListComparison {
            matched_pairs: vec![("a".into(), "a".into()), ("b".into(), "b".into())],
            unique_a: v(&["c"]),
            unique_b: v(&["d", "e"]),
            method: Method::Exact,
            warnings: vec![],
        };
        assert_eq!(jaccard(&c), Ok(0.4));
    }

    #[test]
    fn semantic_pass_through_and_repairs() {
        let a = v(&["pricing concerns", "setup pain"]);
        let b = v(&["price worries", "gpu kernels"]);
        let prompt = render_compare_prompt(&a, &b);
        let ok = r#"[{"present_in_both_lists": [["pricing concerns", "price worries"]],
            "unique_items_in_list_A": ["setup pain"], "unique_items_in_list_B": ["gpu kernels"]}]"#;
        let stub = ScriptedStub::new().with_response(&prompt, ok);
        let c = compare_semantic(&a, &b, &stub).unwrap();
        assert_eq!(c.matched_pairs.len(), 1);
        assert!(c.warnings.is_empty());

        // double listing plus the prompt's own unterminated keys
        let double = r#"```json
[{"present_in_both_lists": [["price worries", "pricing concerns"]],
  "unique_items_in_list_A: ["setup pain", "pricing concerns"],
  "unique_items_in_list_B: ["gpu kernels"]}]
```"#;
        let c = reconcile_semantic(double, &a, &b).unwrap();
        assert_eq!(
            c.matched_pairs,
            vec![("pricing concerns".to_string(), "price worries".to_string())]
        );
        assert_eq!(c.unique_a, v(&["setup pain"]));
        assert_eq!(c.warnings.len(), 2);
        assert!(c.covers(&a, &b));
    }

    #[test]
    fn semantic_rejects_invented_or_missing_items() {
        let a = v(&["x"]);
        let b = v(&["y"]);
        let invented = r#"{"present_in_both_lists": [], "unique_items_in_list_A": ["x", "w"], "unique_items_in_list_B": ["y"]}"#;
        assert!(matches!(
            reconcile_semantic(invented, &a, &b),
            Err(AgreementError::Semantic { .. })
        ));
        let missing = r#"{"present_in_both_lists": [], "unique_items_in_list_A": ["x"], "unique_items_in_list_B": []}"#;
        match reconcile_semantic(missing, &a, &b) {
            Err(AgreementError::Semantic { raw, .. }) => assert_eq!(raw, missing),
            other => panic!("{other:?}"),
        }
        assert!(reconcile_semantic("no idea", &a, &b).is_err());
    }

    #[test]
    fn empty_side_skips_the_model() {
        let stub = ScriptedStub::new();
        let c = compare_semantic(&[], &v(&["a", "b"]), &stub).unwrap();
        assert!(c.matched_pairs.is_empty());
        assert_eq!(c.unique_b, v(&["a", "b"]));
        assert!(stub.calls().is_empty());
    }

    fn pop(label: &str, pairs: &[(&[&str], &[&str])]) -> Population {
        Population {
            label: label.into(),
            pairings: pairs
                .iter()
                .enumerate()
                .map(|(i, (a, b))| StatementPairing {
                    statement: format!("s{i}"),
                    a: v(a),
                    b: v(b),
                })
                .collect(),
        }
    }

    #[test]
    fn report_excludes_both_empty() {
        let p = pop(
            "hh",
            &[
                (&["a"], &["a"]),
                (&[], &[]),
                (&["a", "b"], &["a"]),
                (&["c"], &["d"]),
            ],
        );
        let r = agreement_report(&[p], Method::Exact, None).unwrap();
        let s = &r.populations[0].stats;
        assert_eq!(s.n, 3);
        assert_eq!(s.excluded_both_empty, 1);
        assert!((s.mean - 0.5).abs() < 1e-12);
        assert!(r.welch.is_none());
        let text = render_report_text(&r);
        assert!(text.contains("hh"));
        assert!(render_statement_table(&r.populations[0]).contains("excluded"));
    }

    #[test]
    fn identical_coders_and_equal_populations() {
        let same = pop("same", &[(&["a"], &["a"]), (&["b", "c"], &["c", "b"])]);
        let other = pop(
            "other",
            &[(&["a"], &["b"]), (&["a"], &["a"]), (&["x", "y"], &["x"])],
        );
        let r = agreement_report(&[same, other], Method::Exact, None).unwrap();
        assert_eq!(r.populations[0].stats.mean, 1.0);
        assert!(r.welch.unwrap().t_statistic.is_finite());

        let half = pop(
            "h1",
            &[
                (&["a"], &["a"]),
                (&["a"], &["b"]),
                (&["a"], &["a"]),
                (&["a"], &["b"]),
            ],
        );
        let half2 = Population {
            label: "h2".into(),
            ..half.clone()
        };
        let r = agreement_report(&[half, half2], Method::Exact, None).unwrap();
        assert_eq!(r.welch.unwrap().t_statistic, 0.0);
        assert!(render_report_text(&r).contains("Welch"));
    }

    #[test]
    fn too_few_statements() {
        let p = pop("tiny", &[(&["a"], &["a"]), (&[], &[])]);
        assert!(matches!(
            agreement_report(&[p], Method::Exact, None),
            Err(AgreementError::TooFewStatements { defined: 1, .. })
        ));
    }

    #[test]
    fn coder_files_pair_by_statement() {
        let a = load_coder_csv("statement,topic\ns1,pricing\ns1,setup\ns2,\n").unwrap();
        let b = load_coder_csv("statement,topic\ns1,Pricing\ns3,gpu\n").unwrap();
        let pairs = pair_coders(&a, &b);
        assert_eq!(pairs.len(), 3);
        assert_eq!(pairs[1].a, Vec::<String>::new());
        assert!(load_coder_csv("topic\nx\n").is_err());
    }

    proptest! {
        #[test]
        fn exact_jaccard_matches_set_oracle(
            a in prop::collection::btree_set("[a-e]{1,2}", 0..6),
            b in prop::collection::btree_set("[a-e]{1,2}", 0..6),
        ) {
            let (a, b): (Vec<String>, Vec<String>) = (a.into_iter().collect(), b.into_iter().collect());
            let c = compare_exact(&a, &b);
            prop_assert!(c.covers(&a, &b));
            let inter = a.iter().filter(|x| b.contains(x)).count();
            let union = a.len() + b.len() - inter;
            match jaccard(&c) {
                Ok(j) => prop_assert_eq!(j, inter as f64 / union as f64),
                Err(_) => prop_assert_eq!(union, 0),
            }
        }
    }
}
