use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use malab_core::{FlowTrajectory, ScalarField};

fn malab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_malab")).args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn run(config: &Path, out: &Path) -> Output {
    malab(&["run", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()])
}

const STABILITY: &str = r#"{
  "kind": "stability-elliptic",
  "grid": {"n": 1, "resolution": 16},
  "direction": {"kind": "sine", "amplitude": 1.0},
  "scales": [0.001, 0.003, 0.01, 0.03, 0.1]
}"#;

#[test]
fn solve_elliptic_unit_density_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"kind":"solve-elliptic","grid":{"n":1,"resolution":32}}"#);
    let out = dir.path().join("out");
    let o = run(&cfg, &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let phi = ScalarField::read_mafld1(out.join("phi.mafld")).unwrap();
    assert!(phi.sup_norm() <= 1e-8);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("solve_report.json")).unwrap()).unwrap();
    for key in ["iterations", "final_residual_sup", "damping_history"] {
        assert!(report.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn p_below_one_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"kind":"solve-elliptic","grid":{"n":1,"resolution":16},"p":0.5}"#,
    );
    assert_eq!(run(&cfg, &dir.path().join("out")).status.code(), Some(2));
    assert_eq!(
        malab(&["describe", "--config", cfg.to_str().unwrap()]).status.code(),
        Some(2)
    );
}

#[test]
fn malformed_inputs_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"kind":"solve-elliptic","grid":{"n":1,"resolution":16}}"#);
    let c = cfg.to_str().unwrap();
    assert_eq!(malab(&["frobnicate", "--config", c]).status.code(), Some(2));
    assert_eq!(malab(&["evolve", "--config", c]).status.code(), Some(2));
    assert_eq!(malab(&["run"]).status.code(), Some(2));
    let bad = write_config(dir.path(), "bad.json", r#"{"kind":"solve-elliptic","grid":{"n":1,"resolution":7}}"#);
    assert_eq!(malab(&["run", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
    let junk = write_config(dir.path(), "junk.json", "not json");
    assert_eq!(malab(&["run", "--config", junk.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn numeric_failure_exits_one_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"kind":"solve-elliptic","grid":{"n":1,"resolution":16},"density":{"kind":"sine","amplitude":0.5,"offset":1.0},"tol":1e-300}"#,
    );
    let out = dir.path().join("out");
    let o = run(&cfg, &out);
    assert_eq!(o.status.code(), Some(1));
    let diag: serde_json::Value = serde_json::from_slice(&fs::read(out.join("diagnostic.json")).unwrap()).unwrap();
    assert!(diag["error_debug"].as_str().unwrap().starts_with("Convergence"), "{diag}");
}

#[test]
fn subcommand_may_name_the_kind() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"grid":{"n":1,"resolution":16}}"#);
    let out = dir.path().join("out");
    let o = malab(&["solve-elliptic", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(out.join("phi.mafld").exists());
}

#[test]
fn verify_oracles_default_seed_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"kind":"verify-oracles","grid":{"n":1,"resolution":16},"samples":40}"#,
    );
    let out = dir.path().join("out");
    let o = run(&cfg, &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let mut reader = csv::Reader::from_path(out.join("verdicts.csv")).unwrap();
    let headers = reader.headers().unwrap().clone();
    let ok = headers.iter().position(|h| h == "ok").unwrap();
    let records: Vec<_> = reader.records().map(|r| r.unwrap()).collect();
    assert!(!records.is_empty());
    assert!(records.iter().all(|r| &r[ok] == "true"));
}

#[test]
fn describe_lists_two_solves_per_scale() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", STABILITY);
    let o = malab(&["describe", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("planned solves: 2 per scale x 5 = 10"), "{text}");
    assert!(text.contains("total solves: 10"));
}

#[test]
fn describe_evolve_reports_time_stepping() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"kind":"evolve","grid":{"n":1,"resolution":16},"forcing":{"family":"linear_r","alpha":1.0},"t_final":2.0,"dt":0.01}"#,
    );
    let o = malab(&["describe", "--config", cfg.to_str().unwrap()]);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("initial dt = 0.01"), "{text}");
    assert!(text.contains("step-count estimate <= 200"));
    assert!(text.contains("L = 1"));
    assert!(text.contains("B1 = 1"));
}

#[test]
fn stability_csv_is_reproducible_and_self_describing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", STABILITY);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run(&cfg, &a).status.code(), Some(0));
    assert_eq!(
        malab(&["run", "--config", cfg.to_str().unwrap(), "--out", b.to_str().unwrap(), "--threads", "1"])
            .status
            .code(),
        Some(0)
    );
    let csv_a = fs::read(a.join("report.csv")).unwrap();
    assert_eq!(csv_a, fs::read(b.join("report.csv")).unwrap());
    let header = String::from_utf8(csv_a).unwrap();
    assert!(header.starts_with("s,lp_gap,lp_gap_pos,sup_diff,bound,margin\n"));
    assert!(a.join("report.svg").exists());

    let manifest = a.join("manifest.json");
    let described = malab(&["describe", "--config", manifest.to_str().unwrap()]);
    assert_eq!(described.status.code(), Some(0));
    assert_eq!(described.stdout, fs::read(a.join("plan.txt")).unwrap());
    let m: serde_json::Value = serde_json::from_slice(&fs::read(&manifest).unwrap()).unwrap();
    assert!(m["wall_time_seconds"].as_f64().unwrap() >= 0.0);
    assert_eq!(m["passed"], true);
}

#[test]
fn evolve_writes_verified_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"kind":"evolve","grid":{"n":1,"resolution":16},"forcing":{"family":"linear_r","alpha":1.0},"density":{"kind":"sine","amplitude":0.2,"offset":1.0},"snapshots":8,"t_final":0.5}"#,
    );
    let out = dir.path().join("out");
    assert_eq!(run(&cfg, &out).status.code(), Some(0));
    let traj = FlowTrajectory::read_dir(out.join("trajectory")).unwrap();
    assert_eq!(traj.len(), 9);
    assert_eq!(traj.times[8], 0.5);
    let last = ScalarField::read_mafld1(out.join("phi_final.mafld")).unwrap();
    assert_eq!(last.values(), traj.final_phi().values());
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"kind":"verify-oracles","grid":{"n":1,"resolution":8},"samples":8}"#,
    );
    let out = dir.path().join("out");
    let c = cfg.to_str().unwrap();
    let o = malab(&["run", "--config", c, "--out", out.to_str().unwrap(), "--seed", "42"]);
    assert_eq!(o.status.code(), Some(0));
    let m: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["seed"], 42);
}
