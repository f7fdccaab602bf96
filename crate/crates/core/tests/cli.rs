mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mrayleigh(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mrayleigh"))
        .arg("--quiet")
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("spawn mrayleigh")
}

fn csv_rows(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn corpus_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    for (name, want, got) in common::run_corpus(dir.path()) {
        assert_eq!(got, want, "case {name}");
    }
}

#[test]
fn series_profile_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let out = mrayleigh(
        dir.path(),
        &["profile", "--family", "series", "--alpha0", "0", "--alpha1", "1", "--N", "40", "--coeffs", "0,0,0,1,0,1"],
    );
    assert_eq!(out.status.code(), Some(0));
    let rows = csv_rows(&dir.path().join("profile.csv"));
    assert_eq!(rows.len(), 200);
    for r in rows {
        assert!((r[1] - (1.0 - (-r[0]).exp())).abs() <= 1e-9 * (1.0 + r[1].abs()));
        assert!((r[2] - (-r[0]).exp()).abs() <= 1e-9 * (1.0 + r[2].abs()));
    }
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"family": "vdp-explicit", "a": 1, "c": 1, "d": 3, "K": 1, "n": 50}"#).unwrap();
    let out = mrayleigh(
        &dir.path().join("run"),
        &["--config", cfg.to_str().unwrap(), "--format", "csv", "profile", "--n", "7", "--K", "2"],
    );
    assert_eq!(out.status.code(), Some(0));
    let rows = csv_rows(&dir.path().join("run/profile.csv"));
    assert_eq!(rows.len(), 7);
    let z = rows[3][0];
    assert!((rows[3][1] - 1.0 / (2.0 * (2.0 * z).exp() + 1.0).sqrt()).abs() < 1e-14);
    assert!(!dir.path().join("run/profile.json").exists());
}

#[test]
fn json_only_and_sidecar_fields() {
    let dir = tempfile::tempdir().unwrap();
    let out = mrayleigh(
        dir.path(),
        &["--format", "json", "profile", "--family", "arcsinh", "--a", "1", "--b", "1", "--c", "1", "--K", "1", "--lambda", "1,2"],
    );
    assert_eq!(out.status.code(), Some(0));
    assert!(!dir.path().join("profile.csv").exists());
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("profile.json")).unwrap()).unwrap();
    assert_eq!(v["family"], "arcsinh");
    assert_eq!(v["lambda"], serde_json::json!([1.0, 2.0]));
    assert!(v["domain"].is_object());
    assert!(v["params"].is_object());
}

#[test]
fn verify_reports_and_tolerance_flag() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["verify", "--family", "vdp-explicit", "--a", "1", "--c", "1", "--d", "3", "--K", "1", "--m", "2", "--grid", "-1,1,8"];
    let out = mrayleigh(dir.path(), &args);
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["points"], 512);
    assert!(report["max_abs"].as_f64().unwrap() <= 1e-6);
    let header = fs::read_to_string(dir.path().join("residuals.csv")).unwrap();
    assert!(header.starts_with("x,t1,t2,residual\n"));

    let mut strict = vec!["--tol", "1e-30"];
    strict.extend_from_slice(&args);
    assert_eq!(mrayleigh(dir.path(), &strict).status.code(), Some(1));
}

#[test]
fn invalid_input_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = mrayleigh(dir.path(), &["profile", "--family", "arccosh", "--a", "1", "--b", "-1", "--c", "1", "--K", "1"]);
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("Q = c/b"), "{msg}");
    assert_eq!(mrayleigh(dir.path(), &["series", "--coeffs", "0,0,0,0,1,1", "--alpha1", "1"]).status.code(), Some(2));
    assert_eq!(mrayleigh(dir.path(), &["profile", "--family", "arcsinh", "--a", "NaN", "--b", "1", "--c", "1", "--K", "1"]).status.code(), Some(2));
    assert_eq!(mrayleigh(dir.path(), &["decay", "--family", "arcsinh", "--a", "1", "--b", "-1", "--c", "-1", "--K", "1", "--direction", "1,0"]).status.code(), Some(2));
    assert_eq!(mrayleigh(dir.path(), &["--config", "/nonexistent.json", "series"]).status.code(), Some(2));
}

#[test]
fn thread_cap_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["verify", "--family", "arcsinh", "--a", "1", "--b", "1", "--c", "1", "--K", "1", "--m", "2", "--grid", "-1,1,10"];
    let mut outputs = Vec::new();
    for threads in ["1", "4"] {
        let out_dir = dir.path().join(threads);
        let status = Command::new(env!("CARGO_BIN_EXE_mrayleigh"))
            .args(["--quiet", "--out", out_dir.to_str().unwrap()])
            .args(args)
            .env("MRAYLEIGH_THREADS", threads)
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(0));
        outputs.push(common::tree_bytes(&out_dir));
    }
    assert_eq!(outputs[0], outputs[1]);
}
