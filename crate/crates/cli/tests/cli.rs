use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &["--t-max", "0.2", "--grid.min", "-2", "--grid.max", "2", "--grid.n", "201", "--fan.n", "801"];

fn hjprop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hjprop")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn run_small(out_dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--scenario", "free", "--out", out_dir.to_str().unwrap(), "--name", "r"];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    hjprop(&args)
}

#[test]
fn passing_run_exits_zero_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_small(dir.path(), &["--oracle", "--rescale"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let run = dir.path().join("r");
    for f in [
        "manifest.json",
        "residuals.json",
        "characteristics.csv",
        "propagator.csv",
        "bohm_profile.csv",
        "oracle.csv",
        "clock.csv",
        "collapse.json",
    ] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    assert!(dir.path().join("latest").exists());
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    let checks = manifest["checks"].as_array().unwrap();
    assert!(checks.iter().any(|c| c["name"] == "superposition_vs_oracle" && c["status"] == "skipped"));
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS transport"));
}

#[test]
fn failed_check_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_small(dir.path(), &["--tol", "schrodinger=1e-12"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL schrodinger"));
}

#[test]
fn configuration_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    for args in [
        vec!["run", "--scenario", "nonsense", "--out", d],
        vec!["run", "--scenario", "free", "--grid.n", "-5", "--out", d],
        vec!["run", "--scenario", "free", "--eps", "0", "--out", d],
        vec!["run", "--scenario", "free", "--tol", "nothing=1", "--out", d],
        vec!["run", "--scenario", "free", "--set", "bogus=1", "--out", d],
        vec!["run", "--scenario", "free", "--clock", "cubic:1", "--out", d],
        vec!["run", "--out", d],
        vec!["sweep", "--scenario", "free", "--param", "h", "--values", "0.02,0.01", "--out", d],
        vec!["sweep", "--scenario", "free", "--param", "mass", "--values", "1,2,3", "--out", d],
        vec!["frobnicate"],
    ] {
        let out = hjprop(&args);
        assert_eq!(code(&out), 1, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"scenario": "harmonic", "overrides": {"t_max": "0.2", "grid.min": "-2", "grid.max": "2", "grid.n": "201", "fan.n": "801"}}"#,
    )
    .unwrap();
    let out = hjprop(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--scenario",
        "free",
        "--out",
        dir.path().to_str().unwrap(),
        "--name",
        "c",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("c/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["scenario"], "free");
    assert_eq!(manifest["config"]["overrides"]["grid.n"], "201");
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(code(&run_small(a.path(), &["--rescale"])), 0);
    assert_eq!(code(&run_small(b.path(), &["--rescale"])), 0);
    let mut names: Vec<_> = fs::read_dir(a.path().join("r")).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    for name in names {
        let x = fs::read(a.path().join("r").join(&name)).unwrap();
        let y = fs::read(b.path().join("r").join(&name)).unwrap();
        assert!(x == y, "{name:?} differs");
    }
}

#[test]
fn sweep_writes_table_with_fitted_orders() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec![
        "sweep", "--scenario", "free", "--param", "h", "--values", "0.08,0.04,0.02", "--jobs", "1", "--out",
        dir.path().to_str().unwrap(), "--name", "s", "--t-max", "0.2", "--fan.n", "401",
    ];
    args.push("--eps");
    args.push("0.002");
    let out = hjprop(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(dir.path().join("s/sweep_h.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[0].starts_with("value,schrodinger_l2"));
    assert!(lines[4].starts_with("fitted_order"));
}

#[test]
fn oracle_and_audit_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = hjprop(&["oracle", "--scenario", "free", "--t", "0.3", "--grid.n", "201", "--out", d, "--name", "o"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("o/oracle.csv").is_file());

    // Audit a kernel dump from a run.
    assert_eq!(code(&run_small(dir.path(), &[])), 0);
    let input = dir.path().join("r/propagator.csv");
    let audit_dir = dir.path().join("audit");
    let out = hjprop(&[
        "audit",
        "--scenario",
        "free",
        "--input",
        input.to_str().unwrap(),
        "--out",
        audit_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(audit_dir.join("residuals.json")).unwrap()).unwrap();
    assert!(report["schrodinger_l2"].as_f64().unwrap() < 1e-3);

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "t,x\n0,1\n").unwrap();
    let out = hjprop(&["audit", "--scenario", "free", "--input", bad.to_str().unwrap(), "--out", d]);
    assert_eq!(code(&out), 1);
}
