//! End-to-end tests of the command-line interface: flags, exit codes, and
//! file artifacts.

use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stv"))
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("stv-cli-tests");
    fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

#[test]
fn help_exits_zero_and_documents_flags() {
    let out = run(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["mean-bench", "cov-bench", "rate-check", "fit", "verify"] {
        assert!(text.contains(cmd), "--help missing {cmd}");
    }
    for sub in ["mean-bench", "fit", "rate-check"] {
        let out = run(&[sub, "--help"]);
        assert!(out.status.success(), "{sub} --help failed");
        let text = String::from_utf8_lossy(&out.stdout);
        assert!(text.contains("--seed"));
    }
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn mean_bench_happy_path_writes_csv_and_summary() {
    let out_path = tmp("bench.csv");
    let out = run(&[
        "mean-bench",
        "--d",
        "3",
        "--n",
        "200",
        "--trials",
        "2",
        "--seed",
        "7",
        "--set",
        "outer_steps=200",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = fs::read_to_string(&out_path).unwrap();
    assert!(text.starts_with("scenario,d,n,eps,estimator,trial,seed,error,wall_ms"));
    // 2 trials x 3 estimators data rows + header
    assert_eq!(text.lines().count(), 1 + 6);
    assert!(out_path.with_extension("md").exists());
}

#[test]
fn unknown_override_key_lists_valid_keys() {
    let out = run(&[
        "mean-bench",
        "--set",
        "not_a_key=1",
        "--out",
        tmp("unused.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("unknown override key"));
    assert!(err.contains("outer_steps"), "should list valid keys: {err}");
}

#[test]
fn config_file_round_trips_and_flags_win() {
    let cfg_path = tmp("config.json");
    let cfg = stv::bench::ExperimentConfig::mean_default(4, 150, 2, 3);
    fs::write(&cfg_path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    let out_path = tmp("from-config.csv");
    let out = run(&[
        "mean-bench",
        "--config",
        cfg_path.to_str().unwrap(),
        "--set",
        "outer_steps=150",
        "--trials",
        "1",
        "--seed",
        "3",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let rows = stv::bench::parse_report_csv(&out_path).unwrap();
    assert_eq!(rows.len(), 3, "one trial, three estimators");
    assert!(rows.iter().all(|r| r.d == 4 && r.n == 150));
}

#[test]
fn fit_mean_writes_estimate_json() {
    // Two-column CSV around (1, -1).
    let data_path = tmp("points.csv");
    let mut text = String::new();
    let mut stream = stv::rng::Stream::new(5);
    for _ in 0..200 {
        text.push_str(&format!(
            "{},{}\n",
            1.0 + 0.1 * stream.standard_normal(),
            -1.0 + 0.1 * stream.standard_normal()
        ));
    }
    fs::write(&data_path, text).unwrap();
    let out_path = tmp("fit.json");
    let out = run(&[
        "fit",
        "--model",
        "mean",
        "--data",
        data_path.to_str().unwrap(),
        "--seed",
        "2",
        "--set",
        "outer_steps=300",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(doc["model"], "mean");
    let f: Vec<f64> = doc["f"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert_eq!(f.len(), 2);
    assert!((f[0] - 1.0).abs() < 0.15, "f = {f:?}");
    assert!((f[1] + 1.0).abs() < 0.15, "f = {f:?}");
}

#[test]
fn fit_reports_malformed_line_number() {
    let data_path = tmp("broken.csv");
    fs::write(&data_path, "1.0,2.0\n3.0,oops\n").unwrap();
    let out = run(&[
        "fit",
        "--model",
        "mean",
        "--data",
        data_path.to_str().unwrap(),
        "--out",
        tmp("never.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2"), "stderr: {err}");
}

#[test]
fn fit_rejects_ragged_rows_with_line_number() {
    let data_path = tmp("ragged.csv");
    fs::write(&data_path, "1.0,2.0\n3.0\n").unwrap();
    let out = run(&[
        "fit",
        "--model",
        "mean",
        "--data",
        data_path.to_str().unwrap(),
        "--out",
        tmp("never2.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn verify_passes_on_reference_seed() {
    let out = run(&["verify", "--seed", "1"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.matches("PASS").count(), 5);
    assert_eq!(text.matches("FAIL").count(), 0);
}

#[test]
fn threads_flag_is_validated() {
    let out = run(&[
        "mean-bench",
        "--threads",
        "0",
        "--out",
        tmp("t0.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn seed_determines_json_report() {
    let out_a = tmp("seed-a.json");
    let out_b = tmp("seed-b.json");
    for out in [&out_a, &out_b] {
        let status = bin()
            .args([
                "mean-bench",
                "--d",
                "2",
                "--n",
                "120",
                "--trials",
                "2",
                "--seed",
                "9",
                "--set",
                "outer_steps=150",
                "--format",
                "json",
                "--out",
            ])
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    let a: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&out_a).unwrap()).unwrap();
    let b: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&out_b).unwrap()).unwrap();
    // Errors identical bit for bit; wall times may differ.
    assert_eq!(a["errors"], b["errors"]);
    assert_eq!(a["seeds"], b["seeds"]);
}
