use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const K2: &str = r#"{"states":["a","b"],"rates":[[0,1],[1,0]],"kill":[1,1],"m":[1,1]}"#;
const DA: &str = r#"[{"name":"da","atoms":{"a":1.0}}]"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_permfield"))
}

fn write(dir: &TempDir, name: &str, body: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn moments_table_has_two_state_values() {
    let dir = TempDir::new().unwrap();
    let model = write(&dir, "k2.json", K2);
    let ms = write(&dir, "m.json", DA);
    let out = run(&["moments", "--model", s(&model), "--measures", s(&ms)]);
    assert_eq!(out.status.code(), Some(0));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let rows = doc["rows"].as_array().unwrap();
    let find = |kind: &str, len: usize| {
        rows.iter().find(|r| r["kind"] == kind && r["measures"].as_array().unwrap().len() == len).unwrap()["value"].as_f64().unwrap()
    };
    assert!((find("mu", 1) - 2.0 / 3.0).abs() < 1e-14);
    assert!((find("alpha_permanental", 2) - 4.0 / 9.0).abs() < 1e-14);
}

#[test]
fn moments_edge_cases() {
    let dir = TempDir::new().unwrap();
    let model = write(&dir, "k2.json", K2);
    let empty = write(&dir, "e.json", "[]");
    let out = run(&["moments", "--model", s(&model), "--measures", s(&empty), "--format", "csv"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 1);

    let bad = write(&dir, "bad.json", "{\"states\": [");
    let ms = write(&dir, "m.json", DA);
    assert_eq!(run(&["moments", "--model", s(&bad), "--measures", s(&ms)]).status.code(), Some(2));
    let unknown = write(&dir, "u.json", r#"[{"name":"z","atoms":{"zz":1.0}}]"#);
    assert_eq!(run(&["moments", "--model", s(&model), "--measures", s(&unknown)]).status.code(), Some(2));
}

#[test]
fn verify_suite_exit_codes() {
    let ok = run(&["verify", "--seed", "3", "--samples", "20000"]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    let doc: serde_json::Value = serde_json::from_slice(&ok.stdout).unwrap();
    assert_eq!(doc["pass"], true);

    let corrupted = run(&["verify", "--seed", "3", "--samples", "20000", "--perturb-kernel", "0.1"]);
    assert_eq!(corrupted.status.code(), Some(1));

    assert_eq!(run(&["verify", "--seed", "3", "--samples", "0"]).status.code(), Some(2));
    assert_eq!(run(&["verify", "--samples", "100"]).status.code(), Some(2));
}

#[test]
fn outputs_are_reproducible_across_thread_counts() {
    let dir = TempDir::new().unwrap();
    let model = write(&dir, "k2.json", K2);
    let a = run(&["--threads", "1", "soup", "--model", s(&model), "--seed", "9", "--samples", "50"]);
    let b = run(&["--threads", "4", "soup", "--model", s(&model), "--seed", "9", "--samples", "50"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let c = run(&["--threads", "2", "verify", "--seed", "5", "--samples", "2000", "--format", "csv"]);
    let d = run(&["--threads", "3", "verify", "--seed", "5", "--samples", "2000", "--format", "csv"]);
    assert_eq!(c.stdout, d.stdout);
}

#[test]
fn levy_report_runs_on_any_side() {
    let dir = TempDir::new().unwrap();
    for n in [64, 48] {
        let k = write(&dir, "k.json", &format!(r#"{{"d":1,"N":{n},"beta":1.0,"exponent":{{"kind":"rw","params":{{}}}}}}"#));
        let out = run(&["levy-report", "--kernel", s(&k)]);
        assert_eq!(out.status.code(), Some(0));
        let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        let slope = doc["tau_fit"]["slope"].as_f64().unwrap();
        assert!((slope - 2.0).abs() <= 0.15, "{slope}");
        assert_eq!(doc["measures"][0]["templates"].as_array().unwrap().len(), 4);
    }
    let k = write(&dir, "bad.json", r#"{"d":1,"N":16,"beta":1.0,"exponent":{"kind":"levy","params":{}}}"#);
    assert_eq!(run(&["levy-report", "--kernel", s(&k)]).status.code(), Some(2));
}

#[test]
fn norms_and_caf_demo() {
    let dir = TempDir::new().unwrap();
    let model = write(&dir, "k2.json", K2);
    let ms = write(&dir, "m.json", DA);
    let out = run(&["norms", "--model", s(&model), "--measures", s(&ms), "--norm", "u2_inf,two_pd"]);
    assert_eq!(out.status.code(), Some(0));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["norms"][0]["value"], 1.0);
    assert_eq!(run(&["norms", "--model", s(&model), "--measures", s(&ms), "--norm", "l7"]).status.code(), Some(2));

    let k = write(&dir, "k.json", r#"{"d":1,"N":16,"beta":1.0,"exponent":{"kind":"rw","params":{}}}"#);
    let out = run(&["caf-demo", "--kernel", s(&k), "--seed", "1", "--samples", "20", "--format", "csv"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    for line in text.lines().skip(1).filter(|l| l.starts_with("0,")) {
        assert!(line.ends_with(",0,0,0"), "{line}");
    }
    assert_eq!(run(&["caf-demo", "--kernel", s(&k), "--samples", "20"]).status.code(), Some(2));
}
