//! Run metrics: convergence per input epoch, voltage oscillation, tracking
//! error against the centralized baseline, limit violations and solve timing.

use log::{info, warn};

use crate::agents::{initial_setpoint, ObjectiveKind, SimulationTrace, StepRecord, CONVERGENCE_TOL};
use crate::baseline::{copf_auto, default_grid_points, CopfMethod, CopfObjective};
use crate::feeder::ControlMode;
use crate::powerflow::{solve_power_flow, DispatchSet, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::scenario::{Scenario, StepInputs};

/// Denominator floor of the relative tracking error.
pub const TRACKING_EPS: f64 = 1e-9;

/// A maximal run of consecutive steps with identical inputs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Epoch {
    pub index: usize,
    /// First and last controller step (1-based, inclusive).
    pub first_step: usize,
    pub last_step: usize,
    pub inputs: StepInputs,
}

impl Epoch {
    pub fn len(&self) -> usize {
        self.last_step - self.first_step + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

pub fn epochs(trace: &SimulationTrace) -> Vec<Epoch> {
    let mut out: Vec<Epoch> = Vec::new();
    for s in &trace.steps {
        match out.last_mut() {
            Some(e) if e.inputs == s.inputs => e.last_step = s.step,
            _ => out.push(Epoch { index: out.len(), first_step: s.step, last_step: s.step, inputs: s.inputs }),
        }
    }
    out
}

fn epoch_steps<'a>(trace: &'a SimulationTrace, e: &Epoch) -> &'a [StepRecord] {
    &trace.steps[e.first_step - 1..e.last_step]
}

/// Number of steps, counted from the start of the epoch, until the largest
/// setpoint change drops below [`CONVERGENCE_TOL`] for good: the 1-based
/// position of the last step whose change is at or above it. `None` when the
/// final step of the epoch is still moving.
pub fn steps_to_converge(trace: &SimulationTrace, e: &Epoch) -> Option<usize> {
    let steps = epoch_steps(trace, e);
    let last_moving = steps.iter().rposition(|s| s.max_dispatch_change >= CONVERGENCE_TOL);
    match last_moving {
        None => Some(0),
        Some(i) if i + 1 == steps.len() => None,
        Some(i) => Some(i + 1),
    }
}

/// Largest nodal-voltage deviation (pu magnitude) from the epoch's final
/// state over the steps after the first.
pub fn oscillation_pu(trace: &SimulationTrace, e: &Epoch) -> f64 {
    let steps = epoch_steps(trace, e);
    let last = &steps[steps.len() - 1].state.v_sq;
    steps
        .iter()
        .skip(1)
        .flat_map(|s| s.state.v_sq.iter().zip(last).map(|(a, b)| (a.sqrt() - b.sqrt()).abs()))
        .fold(0.0, f64::max)
}

/// `|ctrl - copf| / max(|copf|, eps)` in percent.
pub fn tracking_error_pct(controller: f64, baseline: f64) -> f64 {
    100.0 * (controller - baseline).abs() / baseline.abs().max(TRACKING_EPS)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineSummary {
    pub objective: f64,
    pub method: CopfMethod,
    pub setpoints: Vec<f64>,
    /// Largest nodal-voltage gap to the controller's final state (pu magnitude).
    pub max_voltage_gap_pu: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochReport {
    pub epoch: Epoch,
    pub steps_to_converge: Option<usize>,
    pub max_osc_pu: f64,
    /// Worst voltage-limit excess at the epoch's final step.
    pub max_v_violation_pu: f64,
    pub controller_objective: f64,
    pub uncontrolled_objective: Option<f64>,
    pub baseline: Result<BaselineSummary, String>,
}

impl EpochReport {
    pub fn tracking_error_pct(&self) -> Option<f64> {
        self.baseline.as_ref().ok().map(|b| tracking_error_pct(self.controller_objective, b.objective))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimingStats {
    pub samples: usize,
    pub median_closed_form_ns: f64,
    pub median_oracle_ns: f64,
}

impl TimingStats {
    pub fn speedup(&self) -> f64 {
        self.median_oracle_ns / self.median_closed_form_ns.max(1.0)
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

pub fn timing_stats(trace: &SimulationTrace) -> Option<TimingStats> {
    let with_oracle: Vec<_> = trace.timing.iter().filter(|t| t.oracle_ns > 0.0).collect();
    if with_oracle.is_empty() {
        return None;
    }
    Some(TimingStats {
        samples: with_oracle.len(),
        median_closed_form_ns: median(with_oracle.iter().map(|t| t.closed_form_ns).collect()),
        median_oracle_ns: median(with_oracle.iter().map(|t| t.oracle_ns).collect()),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub objective_kind: ObjectiveKind,
    /// Per-step series; baseline and uncontrolled values repeat within an epoch.
    pub controller: Vec<f64>,
    pub baseline: Vec<Option<f64>>,
    pub uncontrolled: Vec<Option<f64>>,
    pub epochs: Vec<EpochReport>,
    /// Worst voltage excess over every step of the run (pu magnitude).
    pub max_v_violation_any_step_pu: f64,
    pub steps_with_voltage_violation: usize,
    pub steps_with_current_violation: usize,
    pub timing: Option<TimingStats>,
}

impl RunReport {
    pub fn max_osc_pu(&self) -> f64 {
        self.epochs.iter().map(|e| e.max_osc_pu).fold(0.0, f64::max)
    }

    pub fn max_tracking_error_pct(&self) -> Option<f64> {
        self.epochs.iter().filter_map(|e| e.tracking_error_pct()).reduce(f64::max)
    }

    /// Worst violation at converged (end-of-epoch) states.
    pub fn max_v_violation_pu(&self) -> f64 {
        self.epochs.iter().map(|e| e.max_v_violation_pu).fold(0.0, f64::max)
    }

    pub fn max_steps_to_converge(&self) -> Option<usize> {
        self.epochs.iter().map(|e| e.steps_to_converge).try_fold(0, |m, s| s.map(|s| m.max(s)))
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ReportOptions {
    /// Run the centralized baseline per epoch.
    pub baseline: bool,
    /// Grid points per DER; defaults to [`default_grid_points`].
    pub grid_points: Option<usize>,
}

fn uncontrolled_objective(scenario: &Scenario, kind: ObjectiveKind, inputs: StepInputs) -> Option<f64> {
    let feeder = &scenario.feeder;
    let mut d = DispatchSet::zeros(feeder.len());
    for j in feeder.der_buses() {
        let der = feeder.bus(j).der.expect("DER bus");
        let x = initial_setpoint(der.mode, &der, inputs.pv_mult);
        match der.mode {
            ControlMode::Vvc => d.set(j, der.available_p(inputs.pv_mult), x),
            ControlMode::Vwc => d.set(j, x, 0.0),
        }
    }
    let state = solve_power_flow(feeder, &d, inputs.v_root_sq, inputs.load_mult, DEFAULT_TOL, DEFAULT_MAX_ITER).ok()?;
    Some(match kind {
        ObjectiveKind::Loss => state.total_loss(feeder),
        ObjectiveKind::Generation => d.p.iter().sum(),
    })
}

fn baseline_for(
    scenario: &Scenario,
    kind: ObjectiveKind,
    inputs: StepInputs,
    final_step: &StepRecord,
    grid_points: Option<usize>,
) -> Result<BaselineSummary, String> {
    let feeder = &scenario.feeder;
    let objective = match kind {
        ObjectiveKind::Loss => CopfObjective::MinLoss,
        ObjectiveKind::Generation => CopfObjective::MaxGeneration,
    };
    if scenario.uniform_mode().is_none() && !feeder.der_buses().is_empty() {
        return Err("feeder mixes control modes".into());
    }
    let points = grid_points.unwrap_or_else(|| default_grid_points(feeder.der_buses().len()));
    let r = copf_auto(feeder, inputs, objective, points).map_err(|e| e.to_string())?;
    let gap = r
        .state
        .v_sq
        .iter()
        .zip(&final_step.state.v_sq)
        .map(|(a, b)| (a.sqrt() - b.sqrt()).abs())
        .fold(0.0, f64::max);
    Ok(BaselineSummary { objective: r.objective, method: r.method, setpoints: r.setpoints, max_voltage_gap_pu: gap })
}

pub fn build_report(scenario: &Scenario, trace: &SimulationTrace, opts: ReportOptions) -> RunReport {
    let kind = trace.objective_kind;
    let mut controller = Vec::with_capacity(trace.len());
    let mut baseline = Vec::with_capacity(trace.len());
    let mut uncontrolled = Vec::with_capacity(trace.len());
    let mut reports = Vec::new();

    for e in epochs(trace) {
        let steps = epoch_steps(trace, &e);
        let last = &steps[steps.len() - 1];
        let base = if opts.baseline {
            baseline_for(scenario, kind, e.inputs, last, opts.grid_points)
        } else {
            Err("baseline not requested".into())
        };
        if let Err(msg) = &base {
            if opts.baseline {
                warn!("epoch {}: baseline unavailable: {msg}", e.index);
            }
        }
        let unc = uncontrolled_objective(scenario, kind, e.inputs);
        for s in steps {
            controller.push(s.objective);
            baseline.push(base.as_ref().ok().map(|b| b.objective));
            uncontrolled.push(unc);
        }
        let r = EpochReport {
            epoch: e,
            steps_to_converge: steps_to_converge(trace, &e),
            max_osc_pu: oscillation_pu(trace, &e),
            max_v_violation_pu: last.violations.max_voltage_excess_pu(),
            controller_objective: last.objective,
            uncontrolled_objective: unc,
            baseline: base,
        };
        info!(
            "epoch {} steps {}..={}: converge {:?}, osc {:.3e} pu, tracking {:?} %",
            e.index,
            e.first_step,
            e.last_step,
            r.steps_to_converge,
            r.max_osc_pu,
            r.tracking_error_pct()
        );
        reports.push(r);
    }

    RunReport {
        objective_kind: kind,
        controller,
        baseline,
        uncontrolled,
        epochs: reports,
        max_v_violation_any_step_pu: trace.steps.iter().map(|s| s.violations.max_voltage_excess_pu()).fold(0.0, f64::max),
        steps_with_voltage_violation: trace.steps.iter().filter(|s| !s.violations.voltage.is_empty()).count(),
        steps_with_current_violation: trace.steps.iter().filter(|s| !s.violations.current.is_empty()).count(),
        timing: timing_stats(trace),
    }
}
