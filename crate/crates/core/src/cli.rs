//! Command implementations behind the `endico` binary.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use thiserror::Error;

use crate::agents::{run_simulation_with, SimulationOptions, SimulationTrace};
use crate::baseline::CopfMethod;
use crate::error::{FeederError, SimulationError};
use crate::feeder::ControlMode;
use crate::report::{build_report, ReportOptions, RunReport};
use crate::scenario::{load_scenario, Scenario};
use crate::validate;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("scenario not found: {}", .0.display())]
    ScenarioNotFound(PathBuf),
    #[error(transparent)]
    Scenario(#[from] FeederError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error("cannot write {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0} validation properties failed")]
    ValidationFailed(usize),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::ScenarioNotFound(_) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub scenario: PathBuf,
    pub out: PathBuf,
    /// Overrides the control mode of every DER.
    pub mode: Option<ControlMode>,
    pub alpha: Option<f64>,
    pub timing: bool,
    pub grid_points: Option<usize>,
}

impl RunOptions {
    pub fn new(scenario: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        RunOptions { scenario: scenario.into(), out: out.into(), mode: None, alpha: None, timing: false, grid_points: None }
    }
}

/// Loads the scenario and applies command-line overrides.
pub fn prepare_scenario(opts: &RunOptions) -> Result<Scenario, CliError> {
    if !opts.scenario.is_file() {
        return Err(CliError::ScenarioNotFound(opts.scenario.clone()));
    }
    let mut s = load_scenario(&opts.scenario)?;
    if let Some(mode) = opts.mode {
        s.feeder = s.feeder.with_mode(mode)?;
    }
    if let Some(alpha) = opts.alpha {
        s.alpha = alpha;
    }
    if opts.grid_points == Some(0) {
        return Err(CliError::Usage("--grid-points must be positive".into()));
    }
    s.validate()?;
    Ok(s)
}

fn simulate(scenario: &Scenario, opts: &RunOptions) -> Result<SimulationTrace, CliError> {
    fs::create_dir_all(&opts.out).map_err(io_err(&opts.out))?;
    match run_simulation_with(scenario, SimulationOptions { timing: opts.timing }) {
        Ok(t) => Ok(t),
        Err(SimulationError::PowerFlow { step, source, partial }) => {
            let path = opts.out.join("trace.csv");
            write_trace_csv(&path, scenario, &partial)?;
            Err(SimulationError::PowerFlow { step, source, partial }.into())
        }
        Err(e) => Err(e.into()),
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    /// Scenario after command-line overrides.
    pub scenario: Scenario,
    pub trace: SimulationTrace,
    pub report: RunReport,
}

impl RunOutcome {
    pub fn summary(&self) -> String {
        render_report_text(&self.scenario, &self.report)
    }
}

/// Runs the controller and writes `trace.csv`, `report.csv` and `report.txt`.
pub fn cmd_run(opts: &RunOptions) -> Result<RunOutcome, CliError> {
    let scenario = prepare_scenario(opts)?;
    let trace = simulate(&scenario, opts)?;
    let report = build_report(&scenario, &trace, ReportOptions { baseline: true, grid_points: opts.grid_points });
    write_outputs(&scenario, &trace, &report, &opts.out)?;
    info!("wrote {} steps to {}", trace.len(), opts.out.display());
    Ok(RunOutcome { scenario, trace, report })
}

/// As [`cmd_run`], plus a per-epoch controller/baseline comparison in `compare.csv`.
pub fn cmd_compare(opts: &RunOptions) -> Result<RunOutcome, CliError> {
    let outcome = cmd_run(opts)?;
    let path = opts.out.join("compare.csv");
    write_compare_csv(&path, &outcome.report)?;
    Ok(outcome)
}

/// Runs the randomized property suites, printing one line per property.
/// Returns `Ok(())` only when every property passes.
pub fn cmd_validate(seed: u64, count: usize, out: &mut dyn Write) -> Result<(), CliError> {
    if count == 0 {
        return Err(CliError::Usage("--count must be at least 1".into()));
    }
    let outcomes = validate::run_all(seed, count);
    let stdout = PathBuf::from("<stdout>");
    writeln!(out, "validate seed={seed} count={count}").map_err(io_err(&stdout))?;
    for o in &outcomes {
        writeln!(out, "{o}").map_err(io_err(&stdout))?;
    }
    let failed = outcomes.iter().filter(|o| !o.passed()).count();
    writeln!(out, "{} of {} properties passed", outcomes.len() - failed, outcomes.len()).map_err(io_err(&stdout))?;
    if failed > 0 {
        return Err(CliError::ValidationFailed(failed));
    }
    Ok(())
}

/// Twelve significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.11e}")
}

fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Io { path: path.to_path_buf(), source: e.into() }
}

pub const TRACE_HEADER: [&str; 9] =
    ["step", "bus", "dispatch_p", "dispatch_q", "v_sq", "line_p", "line_q", "line_i_sq", "flag"];

/// One row per controller step and bus, steps ascending, buses in file order.
/// Line columns refer to the line feeding the bus and are empty for the root.
pub fn write_trace_csv(path: &Path, scenario: &Scenario, trace: &SimulationTrace) -> Result<(), CliError> {
    let feeder = &scenario.feeder;
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(TRACE_HEADER).map_err(csv_err(path))?;
    for s in &trace.steps {
        for (j, bus) in feeder.buses().iter().enumerate() {
            let (lp, lq, li) = match feeder.line_into(j) {
                Some(k) => (num(s.state.p_flow[k]), num(s.state.q_flow[k]), num(s.state.i_sq[k])),
                None => (String::new(), String::new(), String::new()),
            };
            let flag = s.agents.iter().find(|a| a.bus == j).map(|a| a.flags.label()).unwrap_or_default();
            w.write_record([
                s.step.to_string(),
                bus.id.clone(),
                num(s.dispatch.p[j]),
                num(s.dispatch.q[j]),
                num(s.state.v_sq[j]),
                lp,
                lq,
                li,
                flag,
            ])
            .map_err(csv_err(path))?;
        }
    }
    w.flush().map_err(io_err(path))
}

pub const REPORT_HEADER: [&str; 5] =
    ["epoch", "steps_to_converge", "tracking_error_pct", "max_osc_pu", "max_v_violation_pu"];

/// One row per epoch; `steps_to_converge` is empty when the epoch ends unsettled.
pub fn write_report_csv(path: &Path, report: &RunReport) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(REPORT_HEADER).map_err(csv_err(path))?;
    for e in &report.epochs {
        w.write_record([
            e.epoch.index.to_string(),
            e.steps_to_converge.map(|s| s.to_string()).unwrap_or_default(),
            opt_num(e.tracking_error_pct()),
            num(e.max_osc_pu),
            num(e.max_v_violation_pu),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub const COMPARE_HEADER: [&str; 10] = [
    "epoch",
    "first_step",
    "last_step",
    "controller_objective",
    "baseline_objective",
    "uncontrolled_objective",
    "tracking_error_pct",
    "max_voltage_gap_pu",
    "baseline_method",
    "baseline_error",
];

pub fn write_compare_csv(path: &Path, report: &RunReport) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(COMPARE_HEADER).map_err(csv_err(path))?;
    for e in &report.epochs {
        let (obj, gap, method, err) = match &e.baseline {
            Ok(b) => (num(b.objective), num(b.max_voltage_gap_pu), method_name(b.method).to_string(), String::new()),
            Err(msg) => (String::new(), String::new(), String::new(), msg.clone()),
        };
        w.write_record([
            e.epoch.index.to_string(),
            e.epoch.first_step.to_string(),
            e.epoch.last_step.to_string(),
            num(e.controller_objective),
            obj,
            opt_num(e.uncontrolled_objective),
            opt_num(e.tracking_error_pct()),
            gap,
            method,
            err,
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn method_name(m: CopfMethod) -> &'static str {
    match m {
        CopfMethod::GridSearch => "grid",
        CopfMethod::CoordinateDescent => "coordinate_descent",
    }
}

pub fn render_report_text(scenario: &Scenario, report: &RunReport) -> String {
    let mut t = String::new();
    let f = &scenario.feeder;
    let _ = writeln!(t, "feeder: {} buses, {} DERs", f.len(), f.der_buses().len());
    let _ = writeln!(
        t,
        "horizon: {} steps of {} s, alpha {}, objective {:?}",
        report.controller.len(),
        scenario.step_seconds,
        scenario.alpha,
        report.objective_kind
    );
    let _ = writeln!(t, "epochs: {}", report.epochs.len());
    match report.max_steps_to_converge() {
        Some(s) => {
            let _ = writeln!(t, "max steps to converge: {s}");
        }
        None => {
            let _ = writeln!(t, "max steps to converge: not settled in at least one epoch");
        }
    }
    let _ = writeln!(t, "max voltage oscillation: {:.6} pu", report.max_osc_pu());
    match report.max_tracking_error_pct() {
        Some(e) => {
            let _ = writeln!(t, "max tracking error: {e:.4} %");
        }
        None => {
            let _ = writeln!(t, "max tracking error: baseline unavailable");
        }
    }
    let _ = writeln!(t, "max voltage violation at converged states: {:.6} pu", report.max_v_violation_pu());
    let _ = writeln!(
        t,
        "max voltage violation over all steps: {:.6} pu ({} steps)",
        report.max_v_violation_any_step_pu, report.steps_with_voltage_violation
    );
    let _ = writeln!(t, "steps with current violations: {}", report.steps_with_current_violation);
    if let Some(ts) = report.timing {
        let _ = writeln!(
            t,
            "node solve timing: closed form {:.0} ns, numeric oracle {:.0} ns (median of {}), ratio {:.1}x",
            ts.median_closed_form_ns,
            ts.median_oracle_ns,
            ts.samples,
            ts.speedup()
        );
    }
    t
}

pub fn write_outputs(scenario: &Scenario, trace: &SimulationTrace, report: &RunReport, out: &Path) -> Result<(), CliError> {
    write_trace_csv(&out.join("trace.csv"), scenario, trace)?;
    write_report_csv(&out.join("report.csv"), report)?;
    let path = out.join("report.txt");
    fs::write(&path, render_report_text(scenario, report)).map_err(io_err(&path))
}
