use std::path::Path;
use std::process::{Command, Output};

use kroncov::harness::read_report;
use kroncov::io;
use nalgebra::DMatrix;
use serde_json::Value;

fn kroncov(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kroncov"))
        .args(args)
        .current_dir(dir)
        .env_remove("KRONCOV_THREADS")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn sidecar(path: &Path) -> Value {
    let name = format!("{}.provenance.json", path.file_name().unwrap().to_string_lossy());
    let text = std::fs::read_to_string(path.with_file_name(name)).expect("sidecar exists");
    serde_json::from_str(&text).unwrap()
}

const SMALL_BENCH: [&str; 12] = [
    "bench",
    "--example",
    "1",
    "--p",
    "6",
    "--f",
    "4",
    "--n-grid",
    "10,20",
    "--mc",
    "3",
    "--estimators=kglasso,ff,ff-thres,glasso,scm",
];

#[test]
fn help_lists_flags_with_defaults() {
    let dir = tempfile::tempdir().unwrap();
    for sub in ["estimate", "simulate", "bench", "rates", "concentration"] {
        let out = kroncov(&[sub, "--help"], dir.path());
        assert_eq!(out.status.code(), Some(0), "{sub}");
        let text = String::from_utf8_lossy(&out.stdout);
        assert!(text.contains("--out"), "{sub}: {text}");
        assert!(text.contains("default"), "{sub}: {text}");
    }
    let out = kroncov(&["estimate", "--help"], dir.path());
    let text = String::from_utf8_lossy(&out.stdout);
    for flag in ["--method", "--samples", "--cx", "--cy", "--k-steps", "--eps", "--max-outer", "--gap-tol", "--emit-product"] {
        assert!(text.contains(flag), "missing {flag}");
    }
    assert!(text.contains("[default: 0.4]"));
}

#[test]
fn missing_required_flag_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = kroncov(&["estimate", "--method", "ff"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let out = kroncov(&["bench", "--example", "3"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let out = kroncov(&["frobnicate"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let out = kroncov(&["bench", "--example", "9", "--out", "r.csv"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn too_few_samples_is_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let data = DMatrix::from_fn(1, 200, |_, j| (j as f64 * 0.37).sin());
    io::write_matrix(dir.path().join("z.csv"), &data).unwrap();
    let out = kroncov(
        &["estimate", "--method", "ff", "--samples", "z.csv", "--p", "100", "--f", "2", "--out", "est"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("SampleSizeTooSmall"), "{}", stderr(&out));
}

#[test]
fn wrong_sample_width_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    io::write_matrix(dir.path().join("z.csv"), &DMatrix::zeros(5, 7)).unwrap();
    let out = kroncov(
        &["estimate", "--method", "ff", "--samples", "z.csv", "--p", "2", "--f", "3", "--out", "est"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn simulate_then_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = kroncov(&["simulate", "--p", "5", "--f", "4", "--n", "30", "--seed", "3", "--out", "sim"], d);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let data = io::read_matrix(d.join("sim_data.csv")).unwrap();
    assert_eq!(data.shape(), (30, 20));
    assert_eq!(io::read_matrix(d.join("sim_x0.csv")).unwrap().shape(), (5, 5));
    let meta = sidecar(&d.join("sim_data.csv"));
    assert_eq!(meta["config"]["n"], 30);
    assert_eq!(meta["config"]["generator"]["x"]["edge_prob"], 0.1);

    for method in ["kglasso", "ff", "ff-thres", "glasso", "scm"] {
        let prefix = format!("est_{method}");
        let out = kroncov(
            &["estimate", "--method", method, "--samples", "sim_data.csv", "--p", "5", "--f", "4", "--emit-product", "--out", &prefix],
            d,
        );
        assert_eq!(out.status.code(), Some(0), "{method}: {}", stderr(&out));
        let theta = io::read_matrix(d.join(format!("{prefix}_theta.csv"))).unwrap();
        assert_eq!(theta.shape(), (20, 20));
        assert!(sidecar(&d.join(format!("{prefix}_theta.csv")))["config"]["samples_sha256"].is_string());
    }
    let x = io::read_matrix(d.join("est_kglasso_x.csv")).unwrap();
    assert_eq!(x.shape(), (5, 5));
    let trace = std::fs::read_to_string(d.join("est_kglasso_trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next(), Some("subiteration,J_lambda"));
    let values: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(values.len() >= 2);
    assert!(values.windows(2).all(|w| w[1] <= w[0] + 1e-8));
}

#[test]
fn bench_is_deterministic_across_threads_and_replayable() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut one = SMALL_BENCH.to_vec();
    one.extend(["--threads", "1", "--out", "one.csv"]);
    let mut two = SMALL_BENCH.to_vec();
    two.extend(["--threads", "2", "--out", "two.csv"]);
    for args in [&one, &two] {
        let out = kroncov(args, d);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    }
    let a = std::fs::read(d.join("one.csv")).unwrap();
    assert_eq!(a, std::fs::read(d.join("two.csv")).unwrap());

    let rows = read_report(&d.join("one.csv")).unwrap();
    assert_eq!(rows.len(), 10);
    assert!(rows.iter().all(|r| r.runtime_ms.is_nan()));

    let out = kroncov(&["bench", "--config", "one.csv.provenance.json", "--out", "replay.csv"], d);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(a, std::fs::read(d.join("replay.csv")).unwrap());
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("cfg.json"),
        r#"{"p": 4, "f": 3, "n_grid": [8, 16], "n_mc": 2, "estimators": ["ff", "kglasso"], "master_seed": 5}"#,
    )
    .unwrap();
    let out = kroncov(&["bench", "--config", "cfg.json", "--mc", "1", "--out", "r.csv"], d);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let meta = sidecar(&d.join("r.csv"));
    assert_eq!(meta["config"]["n_mc"], 1);
    assert_eq!(meta["config"]["master_seed"], 5);
    assert_eq!(meta["config"]["p"], 4);
    let rows = read_report(&d.join("r.csv")).unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0].estimator, "ff");

    std::fs::write(d.join("bad.json"), r#"{"p": 4, "unknown_field": 1}"#).unwrap();
    let out = kroncov(&["bench", "--config", "bad.json", "--out", "r.csv"], d);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn example_three_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let out = kroncov(
        &["bench", "--example", "3", "--n-grid", "10", "--mc", "2", "--seed", "1", "--out", "r.csv"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let rows = read_report(&dir.path().join("r.csv")).unwrap();
    assert!(rows.len() >= 2);
    assert!(rows.iter().all(|r| r.rmse_precision.is_finite()));
}

#[test]
fn rates_and_concentration_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = kroncov(&["rates", "--alpha", "0.1", "--base", "2", "--n-grid", "20,40", "--mc", "2", "--out", "rates.csv"], d);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = std::fs::read_to_string(d.join("rates.csv")).unwrap();
    assert!(text.starts_with("estimator,n,p,f,mse_mean,mse_median,theory,voided"));
    assert_eq!(text.lines().count(), 5);
    assert!(sidecar(&d.join("rates.csv"))["slopes"].is_array());

    let out = kroncov(&["rates", "--alpha", "borderline", "--n-grid", "20", "--mc", "1", "--out", "b.csv"], d);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let out = kroncov(&["rates", "--alpha", "abc", "--out", "b.csv"], d);
    assert_eq!(out.status.code(), Some(1));

    let out = kroncov(
        &["concentration", "--p-grid", "3,6", "--f", "1", "--n-grid", "10", "--mc", "5", "--out", "conc.csv"],
        d,
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = std::fs::read_to_string(d.join("conc.csv")).unwrap();
    assert_eq!(text.lines().count(), 3);
}
