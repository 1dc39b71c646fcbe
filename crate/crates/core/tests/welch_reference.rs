use serde::Deserialize;
use tapestry_core::agreement::{welch_t, welch_t_from_summary};

#[derive(Deserialize)]
struct SampleCase {
    xs: Vec<f64>,
    ys: Vec<f64>,
    t: f64,
    df: f64,
    p: f64,
}

#[derive(Deserialize)]
struct SummaryCase {
    a: (f64, f64, usize),
    b: (f64, f64, usize),
    t: f64,
    df: f64,
    p: f64,
}

#[derive(Deserialize)]
struct Reference {
    samples: Vec<SampleCase>,
    summaries: Vec<SummaryCase>,
}

fn reference() -> Reference {
    let raw = include_str!("fixtures/welch_reference.json");
    serde_json::from_str(raw).expect("welch fixture parses")
}

fn close(label: &str, got: f64, want: f64) {
    assert!(
        (got - want).abs() <= 1e-9 * want.abs().max(1.0),
        "{label}: got {got}, want {want}"
    );
}

#[test]
fn raw_samples_match_scipy() {
    let r = reference();
    assert!(r.samples.len() >= 10);
    for (i, c) in r.samples.iter().enumerate() {
        let w = welch_t(&c.xs, &c.ys).unwrap();
        close(&format!("case {i} t"), w.t_statistic, c.t);
        close(&format!("case {i} df"), w.degrees_of_freedom, c.df);
        close(&format!("case {i} p"), w.p_value, c.p);
    }
}

#[test]
fn summaries_match_scipy() {
    for c in reference().summaries {
        let w = welch_t_from_summary(c.a.0, c.a.1, c.a.2, c.b.0, c.b.1, c.b.2).unwrap();
        close("t", w.t_statistic, c.t);
        close("df", w.degrees_of_freedom, c.df);
        close("p", w.p_value, c.p);
    }
}

#[test]
fn published_summary_statistics_land_in_window() {
    let w = welch_t_from_summary(0.51, 0.36, 80, 0.41, 0.31, 172).unwrap();
    assert!(
        (2.0..=2.4).contains(&w.t_statistic),
        "t = {}",
        w.t_statistic
    );
}
