use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn leeb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_leeb"))
        .args(args)
        .env("LEEB_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn simulate(path: &Path, n: usize, seed: u64, extra: &[&str]) {
    let (n, seed) = (n.to_string(), seed.to_string());
    let mut args = vec!["simulate", "--n", &n, "--seed", &seed, "--out", path.to_str().unwrap()];
    args.extend_from_slice(extra);
    let out = leeb(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    simulate(&a, 1000, 7, &[]);
    simulate(&b, 1000, 7, &[]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(fs::read_to_string(&a).unwrap().lines().count(), 1001);
}

#[test]
fn nocov_estimate_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("sim.csv");
    simulate(&data, 3000, 1, &[]);
    let out = dir.path().join("out");
    let res = leeb(&[
        "estimate", "--data", data.to_str().unwrap(), "--out", out.to_str().unwrap(),
        "--grid", "8,0.2,0.8", "--folds", "5", "--seed", "3",
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let curve = fs::read_to_string(out.join("curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 9);
    assert!(curve.starts_with("d,rho_L,rho_U"));
    for f in ["curve.json", "selection.csv", "sufficient_values.csv", "manifest.json"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["seed"], 3);
    assert!(manifest["pi_hat"].as_f64().unwrap() > 0.0);
}

#[test]
fn estimate_is_reproducible_from_the_manifest_seed() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("sim.csv");
    simulate(&data, 2000, 2, &[]);
    let run = |name: &str| {
        let out = dir.path().join(name);
        let res = leeb(&["estimate", "--data", data.to_str().unwrap(), "--out", out.to_str().unwrap(), "--grid", "5,0.2,0.8", "--seed", "11"]);
        assert!(res.status.success());
        fs::read(out.join("curve.csv")).unwrap()
    };
    assert_eq!(run("one"), run("two"));
}

#[test]
fn dml_estimate_writes_overlap_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("sim.csv");
    simulate(&data, 2000, 4, &["--covariates", "2"]);
    let out = dir.path().join("out");
    let res = leeb(&[
        "estimate", "--mode", "dml", "--data", data.to_str().unwrap(), "--out", out.to_str().unwrap(),
        "--covariates", "x1,x2", "--grid", "3,0.2,0.8", "--folds", "4",
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let overlap: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("overlap.json")).unwrap()).unwrap();
    assert!(overlap["trim_gps"].as_f64().unwrap() > 0.0);
    assert_eq!(fs::read_to_string(out.join("curve.csv")).unwrap().lines().count(), 4);
}

#[test]
fn bad_column_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("sim.csv");
    simulate(&data, 200, 1, &[]);
    let res = leeb(&["estimate", "--data", data.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap(), "--outcome", "earnings"]);
    assert_eq!(res.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(res.stderr.trim_ascii()).unwrap();
    assert_eq!(err["error"], "unknown_column");
    assert!(err["message"].as_str().unwrap().contains("earnings"));
}

#[test]
fn invalid_flag_value_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("sim.csv");
    simulate(&data, 200, 1, &[]);
    let res = leeb(&["estimate", "--data", data.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap(), "--nu", "1.5"]);
    assert_eq!(res.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(res.stderr.trim_ascii()).unwrap();
    assert_eq!(err["error"], "argument");
}

#[test]
fn coverage_writes_per_point_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cov");
    let res = leeb(&["coverage", "--reps", "100", "--n", "1000", "--grid", "5,0.2,0.8", "--ate", "0.35,0.65", "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("coverage.json")).unwrap()).unwrap();
    let points = report["report"]["points"].as_array().unwrap();
    assert_eq!(points.len(), 5);
    assert!(points.iter().all(|p| p["coverage"].as_f64().is_some()));
    assert!(report["report"]["ate"]["coverage"].as_f64().is_some());
    assert_eq!(fs::read_to_string(out.join("coverage.csv")).unwrap().lines().count(), 6);
    assert!(out.join("oracle.json").exists());
}
