use std::path::{Path, PathBuf};
use std::process::Command;

use endico::cli::{cmd_compare, cmd_run, cmd_validate, CliError, RunOptions, COMPARE_HEADER, REPORT_HEADER, TRACE_HEADER};
use endico::feeder::ControlMode;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn endico() -> Command {
    Command::new(env!("CARGO_BIN_EXE_endico"))
}

fn header(path: &Path) -> Vec<String> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.headers().unwrap().iter().map(str::to_string).collect()
}

#[test]
fn missing_scenario_exits_with_usage_code() {
    let out = endico().args(["run", "--scenario", "does/not/exist.json"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("scenario not found"));
}

#[test]
fn bad_arguments_are_rejected() {
    let out = endico().args(["run"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = endico().args(["validate", "--count", "0"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_writes_trace_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = endico()
        .args(["run", "--scenario"])
        .arg(data("three_bus_vvc.json"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("max steps to converge"));
    assert_eq!(header(&dir.path().join("trace.csv")), TRACE_HEADER);
    assert_eq!(header(&dir.path().join("report.csv")), REPORT_HEADER);
    let rows = csv::Reader::from_path(dir.path().join("trace.csv")).unwrap().records().count();
    assert_eq!(rows, 10 * 3);
    assert!(dir.path().join("report.txt").is_file());
}

#[test]
fn compare_writes_per_epoch_rows() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = cmd_compare(&RunOptions::new(data("three_bus_vwc.json"), dir.path())).unwrap();
    let path = dir.path().join("compare.csv");
    assert_eq!(header(&path), COMPARE_HEADER);
    let rows: Vec<_> = csv::Reader::from_path(&path).unwrap().records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), outcome.report.epochs.len());
    assert_eq!(&rows[0][8], "grid");
}

#[test]
fn runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    cmd_run(&RunOptions::new(data("eight_bus_vwc.json"), a.path())).unwrap();
    cmd_run(&RunOptions::new(data("eight_bus_vwc.json"), b.path())).unwrap();
    for f in ["trace.csv", "report.csv", "report.txt"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn mode_and_alpha_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let mut opts = RunOptions::new(data("three_bus_vvc.json"), dir.path());
    opts.mode = Some(ControlMode::Vwc);
    opts.alpha = Some(10.0);
    let o = cmd_run(&opts).unwrap();
    assert_eq!(o.scenario.uniform_mode(), Some(ControlMode::Vwc));
    assert_eq!(o.scenario.alpha, 10.0);
}

#[test]
fn zero_grid_points_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut opts = RunOptions::new(data("three_bus_vvc.json"), dir.path());
    opts.grid_points = Some(0);
    let err = cmd_run(&opts).unwrap_err();
    assert!(matches!(err, CliError::Usage(_)));
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn validate_is_reproducible() {
    let mut a = Vec::new();
    let mut b = Vec::new();
    cmd_validate(7, 50, &mut a).unwrap();
    cmd_validate(7, 50, &mut b).unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("validate seed=7 count=50"));
    assert!(text.lines().filter(|l| l.starts_with("PASS")).count() >= 10);
    assert!(matches!(cmd_validate(7, 0, &mut Vec::new()), Err(CliError::Usage(_))));
}

#[test]
fn thirty_interval_profile_settles_each_interval() {
    let dir = tempfile::tempdir().unwrap();
    let o = cmd_run(&RunOptions::new(data("thirty_interval_vvc.json"), dir.path())).unwrap();
    assert_eq!(o.trace.len(), 300);
    assert_eq!(o.report.epochs.len(), 30);
    for e in &o.report.epochs {
        assert!(e.steps_to_converge.is_some_and(|s| s <= 2), "{:?}", e.steps_to_converge);
    }
}

#[test]
fn steady_three_bus_tracks_the_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let vvc = cmd_compare(&RunOptions::new(data("three_bus_vvc.json"), dir.path())).unwrap();
    let e = &vvc.report.epochs[0];
    let b = e.baseline.as_ref().unwrap();
    assert!(e.tracking_error_pct().unwrap() <= 1.5);
    assert!(b.max_voltage_gap_pu <= 0.001, "{}", b.max_voltage_gap_pu);

    let vwc = cmd_compare(&RunOptions::new(data("three_bus_vwc.json"), dir.path())).unwrap();
    assert!(vwc.report.epochs[0].tracking_error_pct().unwrap() <= 1.8);
}
