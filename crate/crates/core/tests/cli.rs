use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use metriplectic::cli::Scenario;
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_metriplectic"))
}

fn shipped_scenario() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/relaxing-rigid-body.toml")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_scenario(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn shipped_scenario_matches_builtin_preset() {
    let text = std::fs::read_to_string(shipped_scenario()).unwrap();
    assert_eq!(Scenario::parse(&text).unwrap(), Scenario::relaxing_rigid_body());
}

#[test]
fn run_then_check_passes() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("traj.csv");
    let scenario = shipped_scenario();
    let out = run(&["run", "--scenario", path_str(&scenario), "--out", path_str(&csv)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let text = std::fs::read_to_string(&csv).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "step,t,x_1,x_2,x_3,H,S,dS,solver_iters,residual");
    assert_eq!(rows.len(), 2002);
    assert!(rows[1].starts_with("0,0.0000000000000000e0,1.0000000000000000e-3,"));

    let report = dir.path().join("report.json");
    let out = run(&[
        "check",
        "--scenario",
        path_str(&scenario),
        "--traj",
        path_str(&csv),
        "--out",
        path_str(&report),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let json: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["passed"], Value::Bool(true));
    assert_eq!(json["seed"], Value::from(7));
    let names: Vec<&str> = json["checks"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert_eq!(
        names,
        ["energy-drift", "entropy-monotonicity", "entropy-rate", "entropy-sign", "metric-formulation", "induced-tensor"]
    );
    let saved: Value = serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(saved, json);
}

#[test]
fn check_without_trajectory_integrates_the_scenario() {
    let out = run(&["check", "--scenario", path_str(&shipped_scenario())]);
    assert_eq!(code(&out), 0);
}

#[test]
fn rk4_trajectory_fails_the_audit() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("rk4.csv");
    let scenario = shipped_scenario();
    let out = run(&[
        "run",
        "--scenario",
        path_str(&scenario),
        "--out",
        path_str(&csv),
        "--integrator",
        "rk4",
    ]);
    assert_eq!(code(&out), 0);
    assert!(std::fs::read_to_string(&csv).unwrap().starts_with("# scenario: relaxing-rigid-body\n# method: rk4\n"));
    let out = run(&["check", "--scenario", path_str(&scenario), "--traj", path_str(&csv)]);
    assert_eq!(code(&out), 1);
    let json: Value = serde_json::from_slice(&out.stdout).unwrap();
    let energy = &json["checks"][0];
    assert_eq!(energy["name"], "energy-drift");
    assert_eq!(energy["passed"], Value::Bool(false));
}

#[test]
fn solver_failure_writes_truncated_trajectory() {
    let dir = TempDir::new().unwrap();
    let mut s = Scenario::relaxing_rigid_body();
    s.solver.max_iters = 2;
    s.initial_state = vec![1.0, -1.0, 0.5];
    let scenario = write_scenario(&dir, "tight.toml", &s.to_toml());
    let csv = dir.path().join("partial.csv");
    let out = run(&["run", "--scenario", path_str(&scenario), "--out", path_str(&csv)]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.contains("# truncated\n"));
    assert!(text.lines().filter(|l| !l.starts_with('#')).count() >= 2);

    let out = run(&["check", "--scenario", path_str(&scenario)]);
    assert_eq!(code(&out), 2);
}

#[test]
fn configuration_errors_exit_with_3() {
    let dir = TempDir::new().unwrap();
    let empty = write_scenario(&dir, "empty.toml", "");
    let out = run(&["check", "--scenario", path_str(&empty)]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("parse error"));

    let mut s = Scenario::relaxing_rigid_body().to_toml();
    s = s.replace(
        "[system]\nkind = \"rigid-body\"\n",
        "[system]\nkind = \"rigid-body\"\nentropy = { polynomial = [{ coef = 1.0, powers = [1, 0, 0] }] }\n",
    );
    let not_casimir = write_scenario(&dir, "bad.toml", &s);
    let out = run(&["run", "--scenario", path_str(&not_casimir), "--out", path_str(&dir.path().join("x.csv"))]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("residual"));

    let missing = dir.path().join("missing.toml");
    assert_eq!(code(&run(&["check", "--scenario", path_str(&missing)])), 3);
    assert_eq!(code(&run(&["frobnicate"])), 3);
    assert_eq!(code(&run(&["run", "--scenario", path_str(&shipped_scenario())])), 3);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn converge_reports_second_order() {
    let dir = TempDir::new().unwrap();
    let mut s = Scenario::relaxing_rigid_body();
    s.initial_state = vec![0.6, -1.0, 0.8];
    let scenario = write_scenario(&dir, "generic.toml", &s.to_toml());
    let out = run(&["converge", "--scenario", path_str(&scenario), "--h-list", "0.2,0.1,0.05", "--t-final", "5"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let json: Value = serde_json::from_slice(&out.stdout).unwrap();
    let slope = json["slope"].as_f64().unwrap();
    assert!((1.8..=2.2).contains(&slope), "{slope}");
    assert_eq!(json["inconclusive"], Value::Bool(false));

    let out = run(&["converge", "--scenario", path_str(&scenario), "--h-list", "0.1,0.1,0.05"]);
    assert_eq!(code(&out), 3);
}

#[test]
fn sweep_emits_cells_in_grid_order() {
    let dir = TempDir::new().unwrap();
    let grid = write_scenario(
        &dir,
        "grid.toml",
        "step_h = [0.2, 0.1]\nscheme = [\"midpoint\", \"mean-value\", \"coordinate-increment\"]\nkd_variant = [\"unscaled\", \"scaled\"]\nt_final = 20.0\n",
    );
    let out = run(&["sweep", "--scenario", path_str(&shipped_scenario()), "--grid", path_str(&grid)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let json: Value = serde_json::from_slice(&out.stdout).unwrap();
    let cells = json["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 12);
    for (i, c) in cells.iter().enumerate() {
        assert_eq!(c["index"], Value::from(i));
        assert_eq!(c["passed"], Value::Bool(true));
    }
    assert_eq!(cells[0]["scheme"], "midpoint");
    assert_eq!(cells[1]["kd_variant"], "scaled");
    assert_eq!(cells[6]["step_h"], Value::from(0.1));

    let again = run(&["sweep", "--scenario", path_str(&shipped_scenario()), "--grid", path_str(&grid)]);
    assert_eq!(again.stdout, out.stdout);
}

#[test]
fn shipped_sweep_grid_parses() {
    let grid = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/sweep-grid.toml");
    let parsed = metriplectic::cli::SweepGrid::parse(&std::fs::read_to_string(grid).unwrap()).unwrap();
    assert_eq!(parsed.cells(&Scenario::relaxing_rigid_body()).unwrap().len(), 18);
}
