use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const CLOCK: &str = "1700000000000";

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn tapestry(project: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tapestry"))
        .arg("--project")
        .arg(project)
        .args(["--fixed-clock", CLOCK])
        .args(args)
        .env_remove("TAPESTRY_CONFIG")
        .env_remove("TAPESTRY_ACTOR")
        .env_remove("TAPESTRY_PROJECT")
        .output()
        .expect("binary runs")
}

fn ok(project: &Path, args: &[&str]) -> String {
    let out = tapestry(project, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(project: &Path, args: &[&str]) -> (i32, String) {
    let out = tapestry(project, args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    (
        out.status.code().unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

/// A project with objectives and the three fixture interviews ingested.
fn seeded(root: &Path) -> PathBuf {
    let p = root.join("run1");
    ok(&p, &["init", "--name", "Fixture interviews"]);
    let objectives = repo().join("fixtures/objectives.json");
    ok(&p, &["objectives", "set", objectives.to_str().unwrap()]);
    for n in ["p1", "p2", "p4"] {
        let csv = repo().join(format!("fixtures/{n}_interview.csv"));
        ok(
            &p,
            &[
                "ingest",
                csv.to_str().unwrap(),
                "--interviewee",
                &n.to_uppercase(),
            ],
        );
    }
    p
}

fn stub() -> String {
    repo().join("fixtures/run1").to_str().unwrap().to_string()
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path
                    .strip_prefix(dir)
                    .unwrap()
                    .to_string_lossy()
                    .into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn stub_replay_is_byte_identical() {
    let mut trees = Vec::new();
    for _ in 0..2 {
        let tmp = tempfile::tempdir().unwrap();
        let p = seeded(tmp.path());
        let s = stub();
        ok(&p, &["--stub", &s, "extract", "--t", "5", "--c", "4"]);
        ok(&p, &["--stub", &s, "cluster"]);
        trees.push(tree(&p));
    }
    assert!(!trees[0].is_empty());
    assert_eq!(trees[0], trees[1]);
}

#[test]
fn init_ingest_and_status_in_json() {
    let tmp = tempfile::tempdir().unwrap();
    let p = seeded(tmp.path());
    let status: Value = serde_json::from_str(&ok(&p, &["--format", "json", "status"])).unwrap();
    assert_eq!(status["id"], "run1");
    assert_eq!(status["transcripts"], 3);
    assert_eq!(status["live_assignments"], 0);
    let text = ok(&p, &["status"]);
    assert!(text.contains("Fixture interviews (run1)"), "{text}");
}

#[test]
fn missing_project_exits_not_found() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, err) = fails(&tmp.path().join("absent"), &["status"]);
    assert_eq!(code, 3, "{err}");
    assert!(err.starts_with("error[not_found]"), "{err}");
}

#[test]
fn extract_without_a_model_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let p = seeded(tmp.path());
    let out = Command::new(env!("CARGO_BIN_EXE_tapestry"))
        .arg("--project")
        .arg(&p)
        .arg("extract")
        .env_remove("TAPESTRY_CONFIG")
        .env_remove("TAPESTRY_LLM_ENDPOINT")
        .output()
        .unwrap();
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(out.status.code(), Some(2), "{stderr}");
    assert!(stderr.contains("error[validation]"), "{stderr}");
}

#[test]
fn json_errors_go_to_stderr() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, err) = fails(&tmp.path().join("absent"), &["--format", "json", "status"]);
    assert_eq!(code, 3);
    let v: Value = serde_json::from_str(err.trim()).unwrap();
    assert_eq!(v["code"], "not_found");
}

#[test]
fn stale_edit_is_a_conflict() {
    let tmp = tempfile::tempdir().unwrap();
    let p = seeded(tmp.path());
    let s = stub();
    ok(&p, &["--stub", &s, "extract", "--t", "5", "--c", "4"]);
    ok(&p, &["--stub", &s, "cluster"]);
    let clusters: Value = serde_json::from_str(&ok(&p, &["--format", "json", "clusters"])).unwrap();
    let id = clusters[0]["cluster"]["id"].as_str().unwrap().to_string();
    let edit = tmp.path().join("edit.json");
    std::fs::write(
        &edit,
        serde_json::json!({ "kind": "rename_cluster", "cluster_id": id, "name": "Renamed" })
            .to_string(),
    )
    .unwrap();
    let (code, err) = fails(
        &p,
        &["edit", edit.to_str().unwrap(), "--expected-version", "1"],
    );
    assert_eq!(code, 4, "{err}");
    assert!(err.starts_with("error[conflict]"), "{err}");
    ok(&p, &["edit", edit.to_str().unwrap()]);
    let clusters: Value = serde_json::from_str(&ok(&p, &["--format", "json", "clusters"])).unwrap();
    assert!(clusters
        .as_array()
        .unwrap()
        .iter()
        .any(|c| c["cluster"]["name"] == "Renamed"));
}

#[test]
fn review_import_prints_row_errors_and_commits_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let p = seeded(tmp.path());
    let s = stub();
    ok(&p, &["--stub", &s, "extract", "--t", "5", "--c", "4"]);
    ok(&p, &["--stub", &s, "cluster"]);
    let sheet = tmp.path().join("sheet.csv");
    ok(
        &p,
        &[
            "review",
            "export",
            "--reviewer",
            "r1",
            "--out",
            sheet.to_str().unwrap(),
        ],
    );

    let mut rdr = csv::Reader::from_path(&sheet).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let col = |n: &str| headers.iter().position(|h| h == n).unwrap();
    let mut rows: Vec<Vec<String>> = rdr
        .records()
        .map(|r| r.unwrap().iter().map(String::from).collect())
        .collect();
    for r in rows.iter_mut() {
        for c in ["Q1", "Q2", "Q3"] {
            r[col(c)] = "5".into();
        }
        r[col("Accept AI Analysis? (Yes/No)")] = "Yes".into();
    }
    rows[0][col("Q2")] = "0".into();
    rows[2][col("Assignment ID")] = "a-none".into();
    let filled = tmp.path().join("filled.csv");
    let mut w = csv::Writer::from_path(&filled).unwrap();
    w.write_record(&headers).unwrap();
    for r in &rows {
        w.write_record(r).unwrap();
    }
    w.flush().unwrap();
    drop(w);

    let before: Value = serde_json::from_str(&ok(&p, &["--format", "json", "status"])).unwrap();
    let (code, err) = fails(&p, &["review", "import", filled.to_str().unwrap()]);
    assert_eq!(code, 2, "{err}");
    assert!(err.starts_with("error[validation]"), "{err}");
    assert!(err.contains("row 2") && err.contains("Q2"), "{err}");
    assert!(
        err.contains("row 4") && err.contains("Assignment ID"),
        "{err}"
    );
    let after: Value = serde_json::from_str(&ok(&p, &["--format", "json", "status"])).unwrap();
    assert_eq!(before["version"], after["version"]);

    rows[0][col("Q2")] = "5".into();
    let orig: Vec<Vec<String>> = csv::Reader::from_path(&sheet)
        .unwrap()
        .records()
        .map(|r| r.unwrap().iter().map(String::from).collect())
        .collect();
    rows[2][col("Assignment ID")] = orig[2][col("Assignment ID")].clone();
    let mut w = csv::Writer::from_path(&filled).unwrap();
    w.write_record(&headers).unwrap();
    for r in &rows {
        w.write_record(r).unwrap();
    }
    drop(w);
    ok(&p, &["review", "import", filled.to_str().unwrap()]);
    let status: Value = serde_json::from_str(&ok(&p, &["--format", "json", "status"])).unwrap();
    assert_eq!(status["reviews"], rows.len());
}

#[test]
fn summary_report_quotes_fixture_text() {
    let tmp = tempfile::tempdir().unwrap();
    let p = seeded(tmp.path());
    let s = stub();
    ok(&p, &["--stub", &s, "extract", "--t", "5", "--c", "4"]);
    ok(&p, &["--stub", &s, "cluster"]);
    let report = ok(&p, &["report", "--audience", "summary", "--top-k", "3"]);
    assert!(report.starts_with('#'), "{report}");
    let all: String = ["p1", "p2", "p4"]
        .iter()
        .map(|n| {
            std::fs::read_to_string(repo().join(format!("fixtures/{n}_interview.csv"))).unwrap()
        })
        .collect();
    let quotes: Vec<&str> = report
        .lines()
        .filter_map(|l| l.trim_start().strip_prefix("> "))
        .collect();
    assert!(!quotes.is_empty(), "{report}");
    for q in quotes {
        let (body, anchor) = q
            .strip_prefix('"')
            .and_then(|r| r.rsplit_once("\" ["))
            .expect("quote format");
        assert!(anchor.contains(", chars "), "{q}");
        assert!(all.contains(body), "quote not in transcripts: {q}");
    }
}
