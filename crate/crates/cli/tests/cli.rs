use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL_SPEC: &str = "\
policy = dpa
n_users = 2
horizon = 2000
seeds = [0, 1]
sweep.V = [1, 60]
timeseries = first
";

fn dpasim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpasim")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn version_reports_generator_and_schema() {
    let out = dpasim(&["version"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains(env!("CARGO_PKG_VERSION")));
    assert!(text.contains("chacha8-u53-v1"));
    assert!(text.contains("dpasim-results-v1"));
}

#[test]
fn run_writes_results_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "small.cfg", SMALL_SPEC);
    let first = dir.path().join("a");
    let second = dir.path().join("b");
    for out_dir in [&first, &second] {
        let out = dpasim(&["run", &spec, "-o", out_dir.to_str().unwrap(), "-w", "3", "--omit-wall-time"]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = fs::read_to_string(first.join("results.csv")).unwrap();
    let b = fs::read_to_string(second.join("results.csv")).unwrap();
    assert_eq!(a, b);
    // Header plus 2 points x 2 seeds x 2 users.
    assert_eq!(a.lines().count(), 9);
    assert!(a.starts_with("policy,V,arrival_prob,power_budget,seed,user,drop_rate"));
    assert!(first.join("results.meta").exists());
    assert!(first.join("timeseries_dpa_p000_s0.csv").exists());
    assert!(first.join("timeseries_dpa_p001_s0.csv").exists());
    assert!(!first.join("timeseries_dpa_p000_s1.csv").exists());
}

#[test]
fn worker_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "small.cfg", SMALL_SPEC);
    let one = dpasim(&["run", &spec, "-w", "1", "--omit-wall-time"]);
    let four = dpasim(&["run", &spec, "-w", "4", "--omit-wall-time"]);
    assert!(one.status.success() && four.status.success());
    assert_eq!(one.stdout, four.stdout);
}

#[test]
fn invalid_spec_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.cfg", "policy = dpa\nn_users = 2\npower_budget = -1\n");
    let out = dpasim(&["run", &bad]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("power_budget"));

    let unknown = write(dir.path(), "unknown.cfg", "policy = dpa\nn_users = 2\nspeed = 3\n");
    assert_eq!(dpasim(&["run", &unknown]).status.code(), Some(1));
}

#[test]
fn missing_file_exits_3() {
    let out = dpasim(&["run", "/nonexistent/dir/spec.cfg"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn unwritable_output_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "small.cfg", SMALL_SPEC);
    let blocker = write(dir.path(), "blocker", "");
    let out = dpasim(&["run", &spec, "-o", &format!("{blocker}/sub")]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn table1_preset_writes_replay() {
    let dir = tempfile::tempdir().unwrap();
    let out = dpasim(&["preset", "table1", "-o", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    let summary = fs::read_to_string(dir.path().join("table1_summary.csv")).unwrap();
    assert_eq!(
        summary,
        "run,user,drops,avg_power,avg_power_per_transmission\n\
         omega1,1,1,0.3333333333333333,1\n\
         omega2,1,0,1,1.5\n"
    );
    let trace = fs::read_to_string(dir.path().join("table1.csv")).unwrap();
    assert!(trace.contains("omega1,3,G,-,0,0,0"));
    assert!(trace.contains("omega2,3,G,1,1,0,1"));
}

#[test]
fn fig1_preset_with_short_horizon() {
    let dir = tempfile::tempdir().unwrap();
    let out = dpasim(&["preset", "fig1", "-o", dir.path().to_str().unwrap(), "--horizon", "500"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let results = fs::read_to_string(dir.path().join("results.csv")).unwrap();
    // 6 values of V x 10 seeds x 2 users.
    assert_eq!(results.lines().count(), 121);
}

#[test]
fn verify_passes_and_detects_injected_fault() {
    let args = ["verify", "--views", "1000", "--horizon", "1000", "--tiny-instances", "10"];
    let ok = dpasim(&args);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stdout));

    let mut faulty = args.to_vec();
    faulty.extend(["--inject-fault", "tie-rule"]);
    let out = dpasim(&faulty);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL oracle equivalence"));
}
