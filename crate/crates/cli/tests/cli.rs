//! Black-box runs of the `bellgen` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn bellgen(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bellgen"))
        .args(args)
        .current_dir(dir)
        .env_remove("BELLGEN_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

fn error_json(out: &Output) -> Value {
    let line = String::from_utf8_lossy(&out.stderr);
    let v: Value = serde_json::from_str(line.trim()).expect("stderr is one JSON object");
    v["error"].clone()
}

#[test]
fn generate_writes_report_and_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("psi_minus_ideal.json");
    let out = bellgen(&["generate", "--config", cfg.to_str().unwrap(), "--out", "o"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["command"], "generate");
    assert_eq!(report["target"], "psi-");
    assert_eq!(report["seed"], 7);
    assert_eq!(report["config_hash"].as_str().unwrap().len(), 64);
    assert!((report["fidelity_to_target"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    let written = std::fs::read(tmp.path().join("o/generate.json")).unwrap();
    assert_eq!(written, out.stdout);
    let csv = std::fs::read_to_string(tmp.path().join("o/generate.csv")).unwrap();
    assert!(csv.starts_with("basis,re,im,probability\n"));
}

#[test]
fn csv_format_prints_table() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("car_sweep.json");
    let out = bellgen(
        &["car-sweep", "--config", cfg.to_str().unwrap(), "--format", "csv", "--out", "o"],
        tmp.path(),
    );
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("pgr_hz,car\n10000,100000\n"), "{text}");
    assert_eq!(text.lines().count(), 22);
}

#[test]
fn seed_flag_overrides_and_changes_results() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("noon.json");
    let run = |seed: &str, out: &str| {
        let o = bellgen(&["noon", "--config", cfg.to_str().unwrap(), "--seed", seed, "--out", out], tmp.path());
        assert!(o.status.success());
        o.stdout
    };
    let a = run("1", "a");
    let b = run("2", "b");
    assert_ne!(a, b);
    let v: Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(v["seed"], 1);
}

#[test]
fn output_directory_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"{"seed": 1, "output_dir": "from-config"}"#);
    let run = |extra: &[&str], env: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_bellgen"));
        cmd.args(["car-sweep", "--config", &cfg]).args(extra).current_dir(tmp.path());
        match env {
            Some(e) => cmd.env("BELLGEN_OUT_DIR", e),
            None => cmd.env_remove("BELLGEN_OUT_DIR"),
        };
        assert!(cmd.output().unwrap().status.success());
    };
    run(&[], None);
    assert!(tmp.path().join("from-config/car_sweep.json").exists());
    run(&[], Some("from-env"));
    assert!(tmp.path().join("from-env/car_sweep.json").exists());
    run(&["--out", "from-flag"], Some("from-env"));
    assert!(tmp.path().join("from-flag/car_sweep.json").exists());
}

#[test]
fn explain_describes_without_writing() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("phi_plus_tomography.json");
    let out = bellgen(&["tomography", "--config", cfg.to_str().unwrap(), "--explain", "--out", "o"], tmp.path());
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("target: phi+"));
    assert!(text.contains("9 Pauli settings"));
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn too_few_noon_points_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"{"seed": 1, "noon": {"points": 3}}"#);
    let out = bellgen(&["noon", "--config", &cfg], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let err = error_json(&out);
    assert_eq!(err["kind"], "validation");
    assert_eq!(err["exit_code"], 2);
    assert!(err["message"].as_str().unwrap().contains("at least 6"));
}

#[test]
fn both_sources_off_is_degenerate() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"seed": 1, "source": {"eta_a": 0, "eta_b": 0, "p0": 0.1},
            "phases": {"phi1": 1, "theta2": 0, "phi2": 0, "phi3": 0, "theta3": 0, "phi4": 0, "theta4": 0}}"#,
    );
    let out = bellgen(&["generate", "--config", &cfg], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["kind"], "degenerate");
}

#[test]
fn config_errors_name_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"{"seed": 1, "noise": {"visibility": 0.9, "jitter": 0.1}}"#);
    let out = bellgen(&["generate", "--config", &cfg], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let err = error_json(&out);
    assert_eq!(err["kind"], "config");
    assert_eq!(err["path"], "noise.jitter");

    let cfg = write_config(tmp.path(), r#"{"target": "psi+"}"#);
    let out = bellgen(&["generate", "--config", &cfg], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["path"], "seed");

    let out = bellgen(&["generate", "--config", "missing.json"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["kind"], "io");
}

#[test]
fn unreachable_heater_phase_names_the_saturation_bound() {
    let tmp = tempfile::tempdir().unwrap();
    // α/β = 2 rad cannot reach the φ2 = π needed for Φ+.
    let cfg = write_config(
        tmp.path(),
        r#"{"seed": 3, "target": "phi+", "heaters": {"phi2": {"xi0": 0.0, "alpha": 0.2, "beta": 0.1}}}"#,
    );
    let out = bellgen(&["generate", "--config", &cfg], tmp.path());
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let err = error_json(&out);
    assert_eq!(err["path"], "heaters.phi2");
    assert!(err["message"].as_str().unwrap().contains("saturat"), "{err}");
}

#[test]
fn flat_scan_fails_with_numerical_exit_code() {
    let tmp = tempfile::tempdir().unwrap();
    let scan: String = std::iter::once("voltage,rate\n".to_string())
        .chain((0..40).map(|i| format!("{},500\n", i as f64 * 0.25)))
        .collect();
    std::fs::write(tmp.path().join("flat.csv"), scan).unwrap();
    let cfg = write_config(tmp.path(), r#"{"seed": 1, "calibration": {"scan_file": "flat.csv"}}"#);
    let out = bellgen(&["calibrate", "--config", &cfg], tmp.path());
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_json(&out)["kind"], "fit");
}

#[test]
fn zero_window_gives_unbounded_car_with_warning() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"seed": 1, "detectors": {"eta": [0.01, 0.01, 0.01, 0.01], "window_s": 0}, "car": {"points": 3}}"#,
    );
    let out = bellgen(&["car-sweep", "--config", &cfg, "--out", "o"], tmp.path());
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning:"));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["rows"][0]["car"].is_null());
    assert!(report["loglog_slope"].is_null());
    assert_eq!(report["warnings"].as_array().unwrap().len(), 1);
    let csv = std::fs::read_to_string(tmp.path().join("o/car_sweep.csv")).unwrap();
    assert!(csv.contains(",inf\n"));
}

#[test]
fn tomography_reports_uncertainties_and_records() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("psi_plus_tomography.json");
    let out = bellgen(&["tomography", "--config", cfg.to_str().unwrap(), "--out", "o"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    let f = report["metrics"]["fidelity"].as_f64().unwrap();
    assert!((0.88..0.97).contains(&f), "{f}");
    let sd = report["uncertainties"]["fidelity"].as_f64().unwrap();
    assert!(sd > 0.0 && sd < 0.05);
    assert_eq!(report["reconstruction"]["rho"].as_array().unwrap().len(), 16);
    let records: Value = serde_json::from_slice(&std::fs::read(tmp.path().join("o/records.json")).unwrap()).unwrap();
    assert_eq!(records.as_array().unwrap().len(), 9);
    assert!(String::from_utf8_lossy(&out.stderr).contains("psi+"));
}

#[test]
fn recorded_scan_file_is_fitted() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("calibrate_file.json");
    let out = bellgen(&["calibrate", "--config", cfg.to_str().unwrap(), "--out", "o"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["scan_source"], "file");
    let alpha = report["fit"]["calib"]["alpha"].as_f64().unwrap();
    assert!((alpha / 0.12 - 1.0).abs() < 0.02, "{alpha}");
}
