//! End-to-end checks of the `geopid` binary: verbs, outputs and exit codes.

use std::path::PathBuf;
use std::process::{Command, Output};

fn geopid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geopid")).args(args).output().expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let d = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&d);
    d
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn list_systems_names_every_plant() {
    let o = geopid(&["list-systems"]);
    assert_eq!(code(&o), 0);
    let s = stderr(&o);
    for id in ["quadrotor", "rigid-body", "ipc", "hoop", "sphere", "pendulum"] {
        assert!(s.lines().any(|l| l.starts_with(id)), "{id} missing:\n{s}");
    }
}

#[test]
fn run_writes_trace_and_report() {
    let out = scratch("run_ok");
    let o = geopid(&["run", "quad_attitude", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("quad_attitude.csv")).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    assert_eq!(header[0], "t");
    for c in ["v_e", "tau_1", "motor_4_rpm", "error", "saturated", "frozen"] {
        assert!(header.contains(&c), "{c} missing from {header:?}");
    }
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row.len(), header.len());
    // 17 significant digits
    assert!(row.iter().all(|v| v.split('e').next().unwrap().trim_start_matches('-').len() == 18), "{row:?}");
    let report = std::fs::read_to_string(out.join("quad_attitude_report.toml")).unwrap();
    assert!(report.contains("passed = true"));
}

#[test]
fn run_accepts_a_scenario_file() {
    let out = scratch("run_file");
    let file = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/scenarios/ipc_stabilize.toml");
    let o = geopid(&["run", file, "--out", out.to_str().unwrap(), "--decimate", "10"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(out.join("ipc_stabilize.csv").exists());
}

#[test]
fn invalid_input_exits_2() {
    let out = scratch("invalid");
    let out = out.to_str().unwrap();
    for args in [
        vec!["run", "no_such_scenario", "--out", out],
        vec!["run", "hoop_fixed", "--out", out, "--override", "gains.kq=1"],
        vec!["run", "hoop_fixed", "--out", out, "--override", "gains.kp=-1"],
        vec!["run", "hoop_fixed", "--out", out, "--override", "sim.h_control_s=0.0015"],
        vec!["verify-gains", "rigid_body_verified", "--override", "lyapunov.kappa=5"],
        vec!["paper-suite", "--out", out, "--override", "boat:gains.kp=1"],
    ] {
        let o = geopid(&args);
        assert_eq!(code(&o), 2, "{args:?}: {}", stderr(&o));
        assert!(stderr(&o).contains("error"), "{args:?}");
    }
}

#[test]
fn monitor_failure_exits_3() {
    let out = scratch("diverge");
    let o = geopid(&["run", "quad_attitude", "--out", out.to_str().unwrap(), "--override", "gains.ki=1e6"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("FAIL"));
}

#[test]
fn verify_gains_reports_bounds() {
    let o = geopid(&["verify-gains", "rigid_body_verified"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s = stderr(&o);
    assert!(s.contains("mu     = 2.000000"), "{s}");
    assert!(s.contains("kappa  = 0.600000"), "{s}");

    // kappa mu = 1 removes the delta terms: kI_max = kd^3 / mu
    let o = geopid(&["verify-gains", "rigid_body_verified", "--kappa-mu", "1"]);
    let s = stderr(&o);
    assert!(s.contains("delta  = 0.000000"), "{s}");
    assert!(s.contains("kI_max = 108"), "{s}");

    // the bundled pendulum gains are outside the conservative bounds
    let o = geopid(&["verify-gains", "pendulum_upright"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn sweep_writes_one_trace_per_value() {
    let out = scratch("sweep");
    let o = geopid(&[
        "sweep",
        "hoop_fixed",
        "--key",
        "gains.kc",
        "--values",
        "0.05,0.1",
        "--out",
        out.to_str().unwrap(),
        "--override",
        "sim.t_final_s=2",
    ]);
    assert_eq!(code(&o), 3, "short runs cannot meet the hold window: {}", stderr(&o));
    for k in 0..2 {
        assert!(out.join(format!("hoop_fixed_{k:03}.csv")).exists());
    }
}

#[test]
fn suite_passes_and_scoped_overrides_isolate_failures() {
    let out = scratch("suite");
    let o = geopid(&["paper-suite", "--out", out.to_str().unwrap(), "--decimate", "20"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("9/9 scenarios passed"));
    let summary = std::fs::read_to_string(out.join("suite.csv")).unwrap();
    assert_eq!(summary.lines().count(), 10);

    let out = scratch("suite_zeroed");
    let o = geopid(&[
        "paper-suite",
        "--out",
        out.to_str().unwrap(),
        "--decimate",
        "20",
        "--override",
        "sphere:gains.kp=0",
        "--override",
        "sphere:gains.kd=0",
        "--override",
        "sphere:gains.ki=0",
    ]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let summary = std::fs::read_to_string(out.join("suite.csv")).unwrap();
    for l in summary.lines().skip(1) {
        let f: Vec<&str> = l.split(',').collect();
        assert_eq!(f[1] == "false", f[0].starts_with("sphere"), "{l}");
    }
}
