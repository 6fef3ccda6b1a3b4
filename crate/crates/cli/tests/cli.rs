use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn problems() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../problems")
}

fn octool(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_octool")).args(args).output().expect("binary runs")
}

fn run(cmd: &str, problem: &str, extra: &[&str]) -> (i32, Value) {
    let path = problems().join(problem);
    let mut args = vec![cmd, "--problem", path.to_str().unwrap(), "--no-timestamp"];
    args.extend_from_slice(extra);
    let out = octool(&args);
    let code = out.status.code().unwrap();
    let v = serde_json::from_slice(&out.stdout).unwrap_or(Value::Null);
    (code, v)
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn f(v: &Value) -> f64 {
    v.as_f64().unwrap_or_else(|| panic!("not a number: {v}"))
}

#[test]
fn simulate_steering_builtin_and_expressions() {
    for file in ["steering.json", "steering_expr.toml"] {
        let (code, rep) = run("simulate", file, &[]);
        assert_eq!(code, 0);
        assert!((f(&rep["criterion"]) + 0.5).abs() < 1e-9, "{file}: {}", rep["criterion"]);
        assert_eq!(rep["feasibility"]["feasible"], Value::Bool(true));
    }
}

#[test]
fn simulate_constant_drift_is_straight() {
    let (code, rep) = run("simulate", "constant_drift.json", &[]);
    assert_eq!(code, 0);
    for s in rep["trajectory"]["samples"].as_array().unwrap() {
        let t = f(&s["t"]);
        assert!((f(&s["x"][0]) - 0.5 * t).abs() < 1e-12);
    }
}

#[test]
fn malformed_and_unknown_keys_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.json", "{\"builtin\": \"steering\",");
    let out = octool(&["simulate", "--problem", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line"));
    let unknown = write(dir.path(), "u.toml", "builtin = \"steering\"\nhorizn = 2.0\n");
    let out = octool(&["simulate", "--problem", unknown.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("horizn"));
    let undeclared = write(
        dir.path(),
        "e.toml",
        "state_dim = 1\ncontrol_dim = 1\nhorizon = 1.0\nxi0 = [0.0]\nf0 = \"-u2^2\"\nf = [\"u1\"]\n",
    );
    let out = octool(&["simulate", "--problem", undeclared.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(octool(&["frobnicate"]).status.code() == Some(1));
}

#[test]
fn verify_exit_codes() {
    let (code, rep) = run("verify", "lq_scalar.json", &[]);
    assert_eq!(code, 0, "{rep}");
    assert!((f(&rep["criterion"]) + 0.5 * 1f64.tanh()).abs() < 1e-8);

    let (code, rep) = run("verify", "lq_perturbed.toml", &[]);
    assert_eq!(code, 2);
    let mp = rep["certificate"]["conditions"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == "MP")
        .unwrap();
    assert_eq!(mp["verdict"], "fail");
    assert!(f(&mp["residual"]) > 1e-4);

    let (code, rep) = run("verify", "duplicate_constraint.toml", &[]);
    assert_eq!(code, 3);
    assert_eq!(rep["certificate"]["multipliers"]["degenerate"], Value::Bool(true));
}

#[test]
fn envelope_steering_total_and_fd() {
    for file in ["steering.json", "steering_expr.toml"] {
        let (code, rep) = run("envelope", file, &["--dpi", "1"]);
        assert_eq!(code, 0);
        let total = f(&rep["envelope"]["total"]);
        assert!((total + 1.0).abs() < 1e-10, "{file}: {total}");
        let central = rep["fd_table"]["rows"]
            .as_array()
            .unwrap()
            .iter()
            .find(|r| f(&r["h"]) == 1e-4)
            .map(|r| f(&r["central"]))
            .unwrap();
        assert!((central - total).abs() <= 1e-8, "{file}: {central}");
    }
}

#[test]
fn envelope_without_parameters_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "free.toml",
        "state_dim = 1\ncontrol_dim = 1\nhorizon = 1.0\nxi0 = [1.0]\nf0 = \"-(x1^2 + u1^2)/2\"\nf = [\"u1\"]\n",
    );
    let out = octool(&["envelope", "--problem", p.to_str().unwrap(), "--no-timestamp"]);
    assert_eq!(out.status.code(), Some(0));
    let rep: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(f(&rep["envelope"]["total"]), 0.0);
}

#[test]
fn envelope_li_failure_exit_3() {
    let (code, _) = run("envelope", "duplicate_constraint.toml", &[]);
    assert_eq!(code, 3);
}

#[test]
fn envelope_with_needle_and_scans_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let spikes = write(
        dir.path(),
        "spikes.json",
        r#"{"spikes": [{"time": 0.3, "value": [2.0]}], "amplitudes": [[0.01], [0.001]]}"#,
    );
    let out_dir = dir.path().join("out");
    let path = problems().join("steering.json");
    let out = octool(&[
        "envelope",
        "--problem",
        path.to_str().unwrap(),
        "--needle",
        spikes.to_str().unwrap(),
        "--scan-multipliers",
        "--out",
        out_dir.to_str().unwrap(),
        "--format",
        "csv",
        "--no-timestamp",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(out_dir.join("needle_residuals.csv")).unwrap();
    assert!(csv.starts_with("norm_a1,residual_norm,gronwall_ratio,status"));
    assert_eq!(csv.lines().count(), 3);
    assert!(out_dir.join("scan_multipliers.csv").exists());
    assert!(out_dir.join("fd_table.csv").exists());
    let rep: Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert!(rep["scan_multipliers"]["shells"].is_array());
}

#[test]
fn needle_study_csv() {
    let path = problems().join("lq_scalar.json");
    let out = octool(&["needle-study", "--problem", path.to_str().unwrap(), "--format", "csv", "--no-timestamp"]);
    assert_eq!(out.status.code(), Some(0));
    let csv = String::from_utf8(out.stdout).unwrap();
    assert_eq!(csv.lines().count(), 7);
}

#[test]
fn shoot_reports_iterations() {
    let (code, rep) = run("shoot", "steering_expr.toml", &["--pi", "0.9"]);
    assert_eq!(code, 0);
    assert!((f(&rep["multipliers"]["mu"][0]) - 0.9).abs() < 1e-8);
    assert!((f(&rep["criterion"]) + 0.405).abs() < 1e-9);
}

#[test]
fn reports_are_deterministic() {
    let path = problems().join("lq_scalar.json");
    let args = ["verify", "--problem", path.to_str().unwrap(), "--no-timestamp", "--seed", "7"];
    let a = octool(&args);
    let b = octool(&args);
    assert_eq!(a.stdout, b.stdout);
    let stamped = octool(&["simulate", "--problem", path.to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&stamped.stdout).contains("\"timestamp\""));
}
