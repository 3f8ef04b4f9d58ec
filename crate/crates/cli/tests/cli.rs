use std::path::Path;
use std::time::{Duration, Instant};

use assert_cmd::Command;
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut cmd = Command::cargo_bin("robust-margin").unwrap();
    cmd.env_remove("ROBUST_MARGIN_THREADS");
    cmd
}

fn run(dir: &Path, args: &[&str]) -> std::process::Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

fn csv_column(path: &Path, name: &str) -> Vec<f64> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let idx = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records().map(|rec| rec.unwrap()[idx].parse().unwrap()).collect()
}

fn gen(dir: &Path, out: &str, extra: &[&str]) {
    let mut args = vec!["gen-data", "--out", out];
    args.extend_from_slice(extra);
    let o = run(dir, &args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn gen_data_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    gen(tmp.path(), "a.csv", &["--n", "100", "--p", "40", "--seed", "1"]);
    gen(tmp.path(), "b.csv", &["--n", "100", "--p", "40", "--seed", "1"]);
    let a = std::fs::read(tmp.path().join("a.csv")).unwrap();
    assert_eq!(a, std::fs::read(tmp.path().join("b.csv")).unwrap());
    let rows = csv::Reader::from_path(tmp.path().join("a.csv")).unwrap().records().count();
    assert_eq!(rows, 100);

    let truth = json(&tmp.path().join("a.truth.json"));
    assert_eq!(truth["tool"], "robust-margin");
    assert_eq!(truth["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(truth["config"]["seed"], 1);
    let w = floats(&truth["true_weights"]);
    assert!((w.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn fraction_scheme_marks_forty_rows() {
    let tmp = TempDir::new().unwrap();
    gen(tmp.path(), "d.csv", &["--n", "100", "--p", "40", "--eps-scheme", "fraction:0.4:0.3"]);
    let eps = csv_column(&tmp.path().join("d.csv"), "eps");
    assert_eq!(eps.iter().filter(|&&e| e == 0.3).count(), 40);
    assert_eq!(eps.iter().filter(|&&e| e == 0.0).count(), 60);
}

#[test]
fn bad_scheme_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let o = run(tmp.path(), &["gen-data", "--out", "d.csv", "--eps-scheme", "gaussian:1"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn solvers_agree_without_budgets() {
    let tmp = TempDir::new().unwrap();
    gen(tmp.path(), "d.csv", &["--n", "60", "--p", "10", "--seed", "4"]);
    for which in ["mm", "rm"] {
        let o = run(tmp.path(), &["solve", "--data", "d.csv", "--which", which]);
        assert!(o.status.success());
    }
    let (mm, rm) = (json(&tmp.path().join("mm.json")), json(&tmp.path().join("rm.json")));
    let (a, b) = (floats(&mm["weights"]), floats(&rm["weights"]));
    let diff = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    assert!(diff < 1e-8);
    assert_eq!(mm["config"]["which"], "mm");
}

#[test]
fn generic_solution_carries_certificates() {
    let tmp = TempDir::new().unwrap();
    gen(tmp.path(), "d.csv", &["--n", "100", "--p", "40", "--seed", "2", "--eps-scheme", "fraction:0.4:0.05"]);
    let o = run(tmp.path(), &["solve", "--data", "d.csv", "--which", "rm", "--out", "sol.json"]);
    assert!(o.status.success());
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("kkt residual"));
    assert!(stdout.contains("existence bound"));
    let sol = json(&tmp.path().join("sol.json"));
    assert_eq!(sol["status"], "optimal");
    assert!(sol["kkt_residual"].as_f64().unwrap() < 1e-6);
    assert!(sol["theta"].as_f64().unwrap() > 1.0);
    assert!(!sol["support_set"].as_array().unwrap().is_empty());
    assert_eq!(floats(&sol["duals"]).len(), 100);
}

#[test]
fn budget_beyond_bound_is_infeasible() {
    let tmp = TempDir::new().unwrap();
    gen(tmp.path(), "d.csv", &["--n", "50", "--p", "10", "--seed", "3"]);
    run(tmp.path(), &["solve", "--data", "d.csv", "--which", "mm"]);
    let bound = json(&tmp.path().join("mm.json"))["existence_bound"].as_f64().unwrap();
    let scheme = format!("uniform:{}", 1.01 * bound);
    gen(tmp.path(), "e.csv", &["--n", "50", "--p", "10", "--seed", "3", "--eps-scheme", &scheme]);
    let o = run(tmp.path(), &["solve", "--data", "e.csv", "--which", "rm"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(json(&tmp.path().join("rm.json"))["status"], "infeasible");
}

#[test]
fn train_auto_writes_geometric_trajectory() {
    let tmp = TempDir::new().unwrap();
    gen(tmp.path(), "d.csv", &["--n", "30", "--p", "10", "--seed", "5", "--eps-scheme", "fraction:0.5:0.05"]);
    let o = run(tmp.path(), &["train", "--data", "d.csv", "--eta", "auto", "--iters", "100000"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("final grad_norm"));
    assert!(stdout.contains("min robust margin"));
    let t = csv_column(&tmp.path().join("trajectory.csv"), "t");
    assert_eq!(t.first(), Some(&0.0));
    assert_eq!(t.last(), Some(&100000.0));
    assert!(t.len() > 30 && t.len() < 100);
    let w = json(&tmp.path().join("weights.json"));
    assert_eq!(w["config"]["eta"], "auto");
    assert!(w["step_within_bound"].as_bool().unwrap());
}

#[test]
fn s_column_increases_against_robust_reference() {
    let tmp = TempDir::new().unwrap();
    gen(tmp.path(), "d.csv", &["--n", "30", "--p", "10", "--seed", "6", "--eps-scheme", "fraction:0.5:0.1"]);
    assert!(run(tmp.path(), &["solve", "--data", "d.csv", "--which", "rm"]).status.success());
    let o = run(
        tmp.path(),
        &["train", "--data", "d.csv", "--iters", "20000", "--reference", "rm.json"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = csv_column(&tmp.path().join("trajectory.csv"), "s_value");
    assert!(s.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn huge_step_diverges() {
    let tmp = TempDir::new().unwrap();
    gen(tmp.path(), "d.csv", &["--n", "100", "--p", "40", "--seed", "1"]);
    let o = run(tmp.path(), &["train", "--data", "d.csv", "--eta", "1e6", "--iters", "1000"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("divergence"));
}

#[test]
fn missing_input_is_io_error() {
    let tmp = TempDir::new().unwrap();
    let o = run(tmp.path(), &["solve", "--data", "nope.csv", "--which", "mm"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn config_file_is_merged_with_flags() {
    let tmp = TempDir::new().unwrap();
    std::fs::write(tmp.path().join("c.json"), r#"{"n": 20, "p": 3, "seed": 9}"#).unwrap();
    gen(tmp.path(), "d.csv", &["--config", "c.json", "--p", "5"]);
    let cfg = &json(&tmp.path().join("d.truth.json"))["config"];
    assert_eq!(cfg["n"], 20);
    assert_eq!(cfg["p"], 5);
    assert_eq!(cfg["seed"], 9);
}

#[test]
fn quick_check_passes_fast() {
    let start = Instant::now();
    let o = bin().args(["check", "--quick"]).output().unwrap();
    assert!(start.elapsed() < Duration::from_secs(60));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8(o.stdout).unwrap().contains("PASS  loss.gradient_finite_difference"));
}

#[test]
fn sign_flipped_gradient_fails_check() {
    let o = bin().args(["check", "--quick", "--inject-gradient-bug"]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.contains("FAIL  loss.gradient_finite_difference"));
    assert!(String::from_utf8(o.stderr).unwrap().contains("loss.gradient_finite_difference"));
}

#[test]
fn check_report_and_unknown_name() {
    let tmp = TempDir::new().unwrap();
    let o = run(tmp.path(), &["check", "--only", "loss.tail_certificate", "--report", "r.json"]);
    assert!(o.status.success());
    let r = json(&tmp.path().join("r.json"));
    assert_eq!(r["passed"], true);
    assert_eq!(r["outcomes"][0]["status"], "pass");
    let o = run(tmp.path(), &["check", "--only", "no.such.check"]);
    assert_eq!(o.status.code(), Some(1));
}

fn fig1_small(dir: &Path, threads: &str) {
    let o = bin()
        .current_dir(dir)
        .env("ROBUST_MARGIN_THREADS", threads)
        .args(["fig1", "--n", "40", "--p", "8", "--trials", "5", "--levels", "4", "--out-dir", "out"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn fig1_outputs_are_thread_independent() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    fig1_small(a.path(), "1");
    fig1_small(b.path(), "4");
    for f in ["levels.csv", "trials.csv", "summary.json"] {
        let x = std::fs::read(a.path().join("out").join(f)).unwrap();
        assert_eq!(x, std::fs::read(b.path().join("out").join(f)).unwrap(), "{f}");
    }
    let levels = csv::Reader::from_path(a.path().join("out/levels.csv")).unwrap().records().count();
    assert_eq!(levels, 4);

    let mut r = csv::Reader::from_path(a.path().join("out/trials.csv")).unwrap();
    for rec in r.records() {
        let rec = rec.unwrap();
        if &rec[1] == "0" {
            assert_eq!(&rec[3], &rec[4]);
        }
    }
    let summary = json(&a.path().join("out/summary.json"));
    assert_eq!(summary["command"], "fig1");
    assert_eq!(summary["config"]["trials"], 5);
}

#[test]
fn fig2_reports_gap_and_fit() {
    let tmp = TempDir::new().unwrap();
    let o = run(tmp.path(), &["fig2", "--seeds", "0", "--iters", "20000", "--out-dir", "f2"]);
    assert!(o.status.success());
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("mm-vs-rm direction gap"));
    assert!(stdout.contains("R²"));
    let d = csv_column(&tmp.path().join("f2/curves.csv"), "dist_rm");
    assert!(d.last().unwrap() < &d[0]);
    let s = json(&tmp.path().join("f2/summary.json"));
    assert!(s["runs"][0]["fit"]["r_squared"].is_number());
}

#[test]
fn invalid_thread_count_is_rejected() {
    let o = bin().env("ROBUST_MARGIN_THREADS", "zero").args(["check", "--list"]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}
