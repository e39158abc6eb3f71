use std::path::Path;
use std::process::{Command, Output};

fn hmflow(args: &[&str], root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hmflow")).args(args).env("HMFLOW_OUTPUT_ROOT", root).output().unwrap()
}

const SUPERSOLUTION: &str = r#"{"name": "super", "target": {"kind": "round_sphere"},
    "supersolution": {"triples": [[0.5, 0.9, 0.5]], "n_r": 32, "n_t": 32, "comparison_cells": 32}}"#;

const SMOOTH: &str = r#"{"name": "smooth", "target": {"kind": "round_sphere"},
    "domain": {"kind": "flat_torus", "n": 16},
    "initial": {"kind": "random_smooth", "seed": 5, "amplitude": 0.3},
    "flow": {"t_max": 0.02, "snapshot_cadence": 0.01},
    "monitor": {"rho": 1.0},
    "assertions": {"energy_identity": 1e-2, "blowup": false}}"#;

#[test]
fn validate_accepts_and_rejects_with_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.json");
    std::fs::write(&good, SUPERSOLUTION).unwrap();
    assert_eq!(hmflow(&["validate", good.to_str().unwrap()], dir.path()).status.code(), Some(0));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"supersolution": {"triples": [[0.6, 0.6, 0.1]]}}"#).unwrap();
    let out = hmflow(&["validate", bad.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("empty μ interval") && err.contains("target: missing"), "{err}");
    assert_eq!(hmflow(&["validate", "/nonexistent.json"], dir.path()).status.code(), Some(2));
}

#[test]
fn run_writes_under_the_output_root_and_report_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("super.json");
    std::fs::write(&cfg, SUPERSOLUTION).unwrap();
    let out = hmflow(&["run", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let run = dir.path().join("super");
    assert!(run.join("manifest.json").exists());
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS supersolution.min_slack"));
    assert_eq!(hmflow(&["report", run.to_str().unwrap()], dir.path()).status.code(), Some(0));
    std::fs::write(run.join("supersolution_report.json"), "{}").unwrap();
    let out = hmflow(&["report", run.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("MISMATCH"));
}

#[test]
fn failed_assertion_exits_with_one_and_analyze_reuses_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("smooth.json");
    std::fs::write(&cfg, SMOOTH.replace(r#""blowup": false"#, r#""blowup": true"#)).unwrap();
    let out = hmflow(&["run", cfg.to_str().unwrap(), "--out", dir.path().join("r1").to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL flow.blowup"));

    let analysis = dir.path().join("analysis.json");
    std::fs::write(&analysis, r#"{"monitor": {"rho": 1.0}}"#).unwrap();
    let snaps = dir.path().join("r1/snapshots");
    let out = hmflow(&["analyze", snaps.to_str().unwrap(), analysis.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("r1-analysis/scale_trace.csv").exists());
}
