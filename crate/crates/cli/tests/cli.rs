use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
regimes = ["traditional", "cross_sectional", "prospective"]
models = ["ar"]
hidden_sizes = [4]
history_lengths = [1, 2]

[panel]
source = "synthetic"
n_people = 8
study_length = 30
feature_dim = 6

[split]
cutoff = 20
"#;

fn longipanel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_longipanel"))
        .args(args)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("exp.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn error_summary(out: &Output) -> serde_json::Value {
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr.clone()).unwrap();
    serde_json::from_str(stderr.trim()).unwrap_or_else(|_| panic!("stderr is not JSON: {stderr}"))
}

#[test]
fn generate_writes_panel_and_truth() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out_dir = dir.path().join("gen");
    let out = longipanel(&[
        "generate",
        "--config",
        &cfg,
        "--seed",
        "4",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["persons"], 8);
    let panel = std::fs::read_to_string(out_dir.join("panel.csv")).unwrap();
    assert!(panel.starts_with("person_id,day,"));
    assert_eq!(panel.lines().count(), 1 + 8 * 30);
    assert!(out_dir.join("truth.csv").is_file());
}

#[test]
fn run_then_report_reproduces_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out_dir = dir.path().join("run");
    let out = longipanel(&[
        "run",
        "--config",
        &cfg,
        "--out",
        out_dir.to_str().unwrap(),
        "--jobs",
        "1",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["cells"], 6);
    assert_eq!(summary["not_ok"], 0);

    let again = dir.path().join("again");
    let out = longipanel(&[
        "report",
        "--result",
        out_dir.join("result.json").to_str().unwrap(),
        "--out",
        again.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["table2.csv", "fig2b.csv", "fig4.csv", "report.md"] {
        let a = std::fs::read(out_dir.join(name)).unwrap();
        let b = std::fs::read(again.join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn split_then_audit_and_catch_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out_dir = dir.path().join("split");
    let out = longipanel(&["split", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let plan = out_dir.join("plans/cross_sectional.csv");
    let out = longipanel(&["audit", plan.to_str().unwrap(), "--config", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    // move one test instance into train: person-disjointness breaks
    let text = std::fs::read_to_string(&plan).unwrap();
    let line = text.lines().find(|l| l.ends_with(",test")).unwrap().to_string();
    let tampered = text.replacen(&line, &line.replace(",test", ",train"), 1);
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, tampered).unwrap();
    let out = longipanel(&["audit", bad.to_str().unwrap()]);
    assert_eq!(error_summary(&out)["error"], "leakage");
}

#[test]
fn bad_inputs_give_json_errors() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    let out = longipanel(&["run", "--config", missing.to_str().unwrap()]);
    assert_eq!(error_summary(&out)["error"], "io");

    let cfg = write_config(dir.path(), &TINY.replace("cutoff = 20", "cutoff = 30"));
    let out = longipanel(&["split", "--config", &cfg]);
    let err = error_summary(&out);
    assert_eq!(err["error"], "config");
    assert!(err["message"].as_str().unwrap().contains("cutoff"));

    let cfg = write_config(dir.path(), "bogus = 1\n");
    let out = longipanel(&["run", "--config", &cfg]);
    assert_eq!(error_summary(&out)["error"], "config");
}
