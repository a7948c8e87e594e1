use std::path::Path;
use std::process::{Command, Output};

fn hfel_sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hfel-sim")).args(args).output().expect("binary runs")
}

fn canonical_toml() -> String {
    let out = hfel_sim(&["config"]);
    assert!(out.status.success());
    String::from_utf8(out.stdout).unwrap()
}

fn write_config(dir: &Path, edit: impl FnOnce(String) -> String) -> String {
    let path = dir.join("scenario.toml");
    let text = edit(canonical_toml().replace("rounds = 50", "rounds = 3"));
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

fn file_names(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> =
        std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    v.sort();
    v
}

#[test]
fn run_writes_trace_summary_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |s| s);
    let out_dir = dir.path().join("out");
    let out =
        hfel_sim(&["run", "--config", &cfg, "--seed", "4", "--method", "static-t", "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("static-t seed 4"));
    assert_eq!(
        file_names(&out_dir),
        [
            "accuracy_vs_time.svg",
            "energy_vs_round.svg",
            "loss_vs_time.svg",
            "static-t_seed4.csv",
            "summary.csv",
            "summary_by_method.csv"
        ]
    );
    let trace = std::fs::read_to_string(out_dir.join("static-t_seed4.csv")).unwrap();
    // header plus one record per edge round
    assert_eq!(trace.lines().count(), 1 + 3 * 2);
}

#[test]
fn report_rebuilds_from_traces() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |s| s);
    let out_dir = dir.path().join("out");
    let o = out_dir.to_str().unwrap();
    for m in ["fedrt", "ce-fedavg"] {
        let out = hfel_sim(&["run", "--config", &cfg, "--method", m, "--out", o, "--no-report"]);
        assert!(out.status.success());
    }
    assert_eq!(file_names(&out_dir), ["ce-fedavg_seed0.csv", "fedrt_seed0.csv"]);
    let out = hfel_sim(&["report", "--out", o]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = std::fs::read_to_string(out_dir.join("summary_by_method.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    assert!(summary.contains("fedrt,1,") && summary.contains("ce-fedavg,1,"));
}

#[test]
fn sweep_covers_method_seed_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |s| s);
    let out_dir = dir.path().join("sweep");
    let out = hfel_sim(&[
        "sweep",
        "--config",
        &cfg,
        "--method",
        "fedrt,mll-sgd",
        "--seeds",
        "2",
        "--jobs",
        "3",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let names = file_names(&out_dir);
    for f in ["fedrt_seed0.csv", "fedrt_seed1.csv", "mll-sgd_seed0.csv", "mll-sgd_seed1.csv", "summary.csv"] {
        assert!(names.iter().any(|n| n == f), "missing {f} in {names:?}");
    }
    let summary = std::fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 5);
}

#[test]
fn unknown_config_key_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |s| s.replace("psi = 10", "psi = 10\ngossip_steps = 3"));
    let out = hfel_sim(&["run", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gossip_steps"));
}

#[test]
fn invalid_value_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |s| s.replace("f_min = 2000000000.0", "f_min = 4000000000.0"));
    let out = hfel_sim(&["run", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn infeasible_scenario_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |s| s.replace("energy_budget = 1.0", "energy_budget = 0.0001"));
    let out = hfel_sim(&["run", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("device"));
}

#[test]
fn unknown_method_is_rejected() {
    let out = hfel_sim(&["run", "--method", "fedprox", "--out", "/nonexistent"]);
    assert!(!out.status.success());
}
