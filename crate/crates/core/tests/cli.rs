use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn cli(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_elastic-lab"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn read(path: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

#[test]
fn identical_seeds_give_byte_identical_csvs() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let args = ["run", "--scheme", "exact", "--p", "1", "--T", "100", "--seed-data", "4", "--trials", "2"];
    assert!(cli(a.path(), &args).status.success());
    assert!(cli(b.path(), &args).status.success());
    for k in 0..2 {
        let name = format!("trial_{k:03}.csv");
        assert_eq!(read(a.path().join(&name)), read(b.path().join(&name)));
    }
    assert_ne!(read(a.path().join("trial_000.csv")), read(a.path().join("trial_001.csv")));
    let lines = String::from_utf8(read(a.path().join("trial_000.csv"))).unwrap();
    assert_eq!(lines.lines().count(), 102);
    assert!(lines.starts_with("t,f_value,grad_norm2,gap2_min,gap2_max,gap2_mean,I_t_size,dist2_to_opt\n"));
}

#[test]
fn zero_crash_budget_reproduces_exact_csv() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let common = ["--p", "4", "--T", "50", "--alpha", "0.05"];
    let mut exact = vec!["run", "--scheme", "exact"];
    exact.extend(common);
    let mut crash = vec!["run", "--scheme", "crash_m2", "--f", "0"];
    crash.extend(common);
    assert!(cli(a.path(), &exact).status.success());
    assert!(cli(b.path(), &crash).status.success());
    assert_eq!(read(a.path().join("trial_000.csv")), read(b.path().join("trial_000.csv")));
}

#[test]
fn summary_minimum_matches_csv_column() {
    let dir = TempDir::new().unwrap();
    let out = cli(dir.path(), &["run", "--scheme", "async_mp", "--tau-max", "2", "--T", "80"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut reader = csv::Reader::from_path(dir.path().join("trial_000.csv")).unwrap();
    let col_min = reader
        .records()
        .map(|r| r.unwrap()[2].parse::<f64>().unwrap())
        .fold(f64::INFINITY, f64::min);
    let summary: serde_json::Value = serde_json::from_slice(&read(dir.path().join("summary.json"))).unwrap();
    let reported = summary["summary"]["runs"][0]["min_grad_norm2"].as_f64().unwrap();
    assert_eq!(reported, col_min);
    assert_eq!(summary["fingerprint"].as_str().unwrap().len(), 64);
}

#[test]
fn config_errors_exit_with_2() {
    let dir = TempDir::new().unwrap();
    let out = cli(dir.path(), &["run", "--scheme", "crash_m2", "--p", "4", "--f", "3"]);
    assert_eq!(out.status.code(), Some(2));
    let out = cli(dir.path(), &["run", "--scheme", "nonsense"]);
    assert_eq!(out.status.code(), Some(2));
    let out = cli(dir.path(), &["--config", "/nonexistent/config.json", "run"]);
    assert_eq!(out.status.code(), Some(2));
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"trials": 1, "unknown_key": 3}"#).unwrap();
    let out = cli(dir.path(), &["--config", bad.to_str().unwrap(), "run"]);
    assert_eq!(out.status.code(), Some(2));
    let out = cli(dir.path(), &["sweep"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invariant_abort_exits_with_3() {
    let dir = TempDir::new().unwrap();
    let out = cli(dir.path(), &["run", "--alpha", "5", "--T", "2000"]);
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("invariant"), "{stderr}");
}

#[test]
fn sweep_writes_one_row_per_cell() {
    let dir = TempDir::new().unwrap();
    let out = cli(
        dir.path(),
        &["sweep", "--scheme", "elastic_norm", "--full-arrival", "--T", "30", "--trials", "2", "--axis", "beta=0,0.5,1"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut reader = csv::Reader::from_path(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(&reader.headers().unwrap()[0], "beta");
    assert_eq!(reader.records().count(), 3);

    let out = cli(dir.path(), &["sweep", "--T", "30", "--axis", "trials=3"]);
    assert!(out.status.success());
    let reader = csv::Reader::from_path(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(reader.into_records().count(), 1);
}

#[test]
fn verify_bounds_and_lower_bound_reports() {
    let dir = TempDir::new().unwrap();
    let out = cli(dir.path(), &["verify-bounds", "--scheme", "crash_var", "--f", "1", "--T", "40", "--trials", "30"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(read(dir.path().join("verify_bounds.csv"))).unwrap();
    assert!(text.starts_with("scheme,B_theory,B_empirical,B_empirical_se,ratio,pass,alpha\n"));
    assert!(text.contains("PASS"));

    let out = cli(dir.path(), &["verify-bounds", "--trials", "5"]);
    assert_eq!(out.status.code(), Some(2));

    let out = cli(dir.path(), &["lower-bound", "--b-list", "0,1,2"]);
    assert!(out.status.success());
    let rows: Vec<csv::StringRecord> = csv::Reader::from_path(dir.path().join("lower_bound.csv"))
        .unwrap()
        .into_records()
        .map(|r| r.unwrap())
        .collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0][2], rows[0][3]);
}

#[test]
fn dump_objective_writes_constants() {
    let dir = TempDir::new().unwrap();
    let out = cli(dir.path(), &["dump-objective"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&read(dir.path().join("objective.json"))).unwrap();
    assert_eq!(v["constants"]["l"].as_f64(), Some(2.0));
    assert_eq!(v["spec"]["kind"], "quadratic");
}

#[test]
fn schedule_file_replays_events() {
    let dir = TempDir::new().unwrap();
    let plan = dir.path().join("plan.json");
    std::fs::write(&plan, r#"[{"kind": "crash", "t": 3, "node": 1, "targets": [0]}]"#).unwrap();
    let out = cli(
        dir.path(),
        &["run", "--scheme", "crash_m2", "--f", "1", "--p", "4", "--T", "10", "--schedule", plan.to_str().unwrap()],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let events: serde_json::Value = serde_json::from_slice(&read(dir.path().join("trial_000_events.json"))).unwrap();
    assert_eq!(events[0]["kind"], "crash");
    assert_eq!(events[0]["t"], 3);
}
