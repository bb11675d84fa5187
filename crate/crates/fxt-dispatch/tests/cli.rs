//! End-to-end checks of the command-line driver: subcommands, exit codes,
//! output files.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fxt-dispatch"))
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin()
        .args(args)
        .arg("--out")
        .arg(dir)
        .output()
        .expect("binary runs")
}

fn case30_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/case30.json")
}

fn write_two_bus_scenario(dir: &Path) -> PathBuf {
    let text = r#"{
  "name": "two-bus",
  "case": {
    "name": "two-bus",
    "generators": [
      { "alpha": 0.5, "beta": 1.0, "gamma": 0.0, "p_min": 0.0, "p_max": 50.0 },
      { "alpha": 1.0, "beta": 2.0, "gamma": 0.0, "p_min": 0.0, "p_max": 50.0 }
    ],
    "loads": [12.0, 6.0]
  },
  "topology_schedule": {
    "topologies": [ { "n": 2, "edges": [[0, 1]] } ],
    "phases": [ { "t": 0.0, "topology": 0 } ]
  },
  "gains": { "p": 2.0, "mu1": 0.8, "mu2": 1.2, "nu1": 0.8, "nu2": 1.2, "dt": 1e-4, "smoothing_eps": 0.005 },
  "noise": { "kind": "none" },
  "t_end": 30.0,
  "seed": 7,
  "mode": "unconstrained",
  "tol": 1e-3
}"#;
    let path = dir.join("two-bus.json");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn oracle_subcommand_prints_dispatch_solution() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &[
            "oracle",
            case30_path().to_str().unwrap(),
            "--demand",
            "250",
        ],
    );
    assert!(out.status.success());
    let solution: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let total: f64 = solution["p_star"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .sum();
    assert!((total - 250.0).abs() < 1e-6);
    assert!(solution["lambda_star"].as_f64().unwrap() > 0.0);

    // builtin case names work without a file
    let out = run_in(dir.path(), &["oracle", "case57", "--demand", "141.13"]);
    assert!(out.status.success());
}

#[test]
fn simulate_writes_trace_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_two_bus_scenario(dir.path());
    let out = run_in(dir.path(), &["simulate", scenario.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let trace_path = dir.path().join("two-bus-seed7-init0.trace.csv");
    let csv = std::fs::read_to_string(&trace_path).unwrap();
    let header = csv.lines().next().unwrap();
    assert_eq!(header, "t,lambda_0,lambda_1,P_0,P_1,consensus_err,balance_residual,V");

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("two-bus-seed7-init0.summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["pass"], serde_json::Value::Bool(true));
    // lambda* for this case: (18 + 1 + 1) / (1 + 0.5) = 40/3
    let expect = 40.0 / 3.0;
    let got = summary["achieved_lambda"].as_f64().unwrap();
    assert!((got - expect).abs() < 1e-3, "lambda {got} vs {expect}");

    // byte-stable across runs
    let rerun_dir = tempfile::tempdir().unwrap();
    let scenario2 = write_two_bus_scenario(rerun_dir.path());
    let out2 = run_in(rerun_dir.path(), &["simulate", scenario2.to_str().unwrap()]);
    assert_eq!(out2.status.code(), Some(0));
    let csv2 = std::fs::read_to_string(rerun_dir.path().join("two-bus-seed7-init0.trace.csv")).unwrap();
    assert_eq!(csv, csv2);
}

#[test]
fn constrained_subcommand_forces_mode() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_two_bus_scenario(dir.path());
    let out = run_in(dir.path(), &["constrained", scenario.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary[0]["mode"], "constrained");
}

#[test]
fn discrete_subcommand_with_flags() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_two_bus_scenario(dir.path());
    let out = run_in(
        dir.path(),
        &[
            "discrete",
            scenario.to_str().unwrap(),
            "--h",
            "0.05",
            "--tol",
            "1e-6",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary[0]["mode"], "discrete");
    assert!(summary[0]["iterations"].as_u64().unwrap() <= 4);
    assert!(dir.path().join("two-bus-seed7-init0.iterations.csv").exists());

    // an impossible iteration budget is a convergence failure
    let out = run_in(
        dir.path(),
        &["discrete", scenario.to_str().unwrap(), "--max-iters", "1"],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bounds_subcommand_reports_settling_times() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_two_bus_scenario(dir.path());
    let out = run_in(dir.path(), &["bounds", scenario.to_str().unwrap()]);
    assert!(out.status.success());
    let bounds: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(bounds["t1"].as_f64().unwrap() > 0.0);
    assert!(bounds["t2"].as_f64().unwrap() > 0.0);
    assert_eq!(bounds["p_min_gain"].as_f64().unwrap(), 0.0);
}

#[test]
fn exit_codes_reflect_inputs_and_convergence() {
    let dir = tempfile::tempdir().unwrap();

    // unknown subcommand: input error
    let out = run_in(dir.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));

    // unknown study name: input error
    let out = run_in(dir.path(), &["reproduce", "iv-z"]);
    assert_eq!(out.status.code(), Some(1));

    // missing scenario file: input error
    let out = run_in(dir.path(), &["simulate", "no-such-file.json"]);
    assert_eq!(out.status.code(), Some(1));

    // a horizon too short to converge: convergence failure
    let scenario = write_two_bus_scenario(dir.path());
    let text = std::fs::read_to_string(&scenario).unwrap();
    let short = text.replace("\"t_end\": 30.0", "\"t_end\": 0.001");
    std::fs::write(dir.path().join("short.json"), short).unwrap();
    let out = run_in(
        dir.path(),
        &["simulate", dir.path().join("short.json").to_str().unwrap()],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn trials_fan_out_and_merge_by_seed() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_two_bus_scenario(dir.path());
    let out = run_in(
        dir.path(),
        &["simulate", scenario.to_str().unwrap(), "--trials", "3"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summaries: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let arr = summaries.as_array().unwrap();
    assert_eq!(arr.len(), 3);
    let seeds: Vec<u64> = arr.iter().map(|s| s["seed"].as_u64().unwrap()).collect();
    assert_eq!(seeds, vec![7, 8, 9]);
}

#[test]
fn shipped_scenario_file_runs_verbatim() {
    let dir = tempfile::tempdir().unwrap();
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/iv-c.json");
    let out = run_in(dir.path(), &["discrete", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn reproduce_runs_the_discrete_study() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["reproduce", "iv-c"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summaries: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summaries[0]["pass"], serde_json::Value::Bool(true));
    assert!(summaries[0]["iterations"].as_u64().unwrap() <= 40);
}
