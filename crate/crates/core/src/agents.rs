//! Distributed controller runtime.
//!
//! One agent per DER bus. Each step runs in bulk-synchronous rounds:
//!
//! 1. every agent computes its setpoint from the boundary values it received
//!    at the previous step (parent voltage, flows into its children);
//! 2. the physical feeder settles under the new setpoints (power-flow solve);
//! 3. agents measure their own voltage and line flow and exchange them with
//!    their neighbors, which become the next step's boundary values.
//!
//! No agent sees another agent's output from the same round.

use std::time::Instant;

use rayon::prelude::*;

use crate::closedform::{
    build_subproblem, node_numeric_oracle, vvc_dispatch, vwc_dispatch, Binding, NodeSubproblem, OracleObjective,
    SubproblemInputs,
};
use crate::error::SimulationError;
use crate::feeder::{ControlMode, DerSpec, Feeder, Line};
use crate::powerflow::{
    branch_flow_residual, check_operational_limits, solve_power_flow, BranchFlowResidual, DispatchSet, NetworkState,
    ViolationReport, DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use crate::scenario::{FpiTargets, Scenario, StepInputs};

/// Dispatch change below which agents are considered settled (pu).
pub const CONVERGENCE_TOL: f64 = 1e-4;

/// Fixed-point smoothing of a boundary value: `(current + alpha * previous) / (1 + alpha)`.
pub fn fpi_smooth(current: f64, previous: f64, alpha: f64) -> f64 {
    (current + alpha * previous) / (1.0 + alpha)
}

/// Boundary values an agent has received: the latest and the one before.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborSnapshot {
    pub parent_v_sq: f64,
    pub child_flows: Vec<(f64, f64)>,
    pub prev_parent_v_sq: f64,
    pub prev_child_flows: Vec<(f64, f64)>,
}

impl NeighborSnapshot {
    /// Reads the values observable at `bus` from a physical state.
    pub fn observe(feeder: &Feeder, bus: usize, state: &NetworkState) -> (f64, Vec<(f64, f64)>) {
        let parent = feeder.bus(bus).parent.expect("agents live below the root");
        let flows = feeder
            .bus(bus)
            .children
            .iter()
            .map(|&c| {
                let k = feeder.line_into(c).expect("child has a line");
                (state.p_flow[k], state.q_flow[k])
            })
            .collect();
        (state.v_sq[parent], flows)
    }

    /// Snapshot with no history: previous values equal the current ones.
    pub fn initial(feeder: &Feeder, bus: usize, state: &NetworkState) -> Self {
        let (v, flows) = Self::observe(feeder, bus, state);
        NeighborSnapshot {
            parent_v_sq: v,
            child_flows: flows.clone(),
            prev_parent_v_sq: v,
            prev_child_flows: flows,
        }
    }

    /// Shifts the latest values into history and stores the new measurements.
    pub fn advance(&mut self, parent_v_sq: f64, child_flows: Vec<(f64, f64)>) {
        self.prev_parent_v_sq = self.parent_v_sq;
        self.prev_child_flows = std::mem::replace(&mut self.child_flows, child_flows);
        self.parent_v_sq = parent_v_sq;
    }

    fn sums(flows: &[(f64, f64)]) -> (f64, f64) {
        flows.iter().fold((0.0, 0.0), |(p, q), &(a, b)| (p + a, q + b))
    }

    /// Boundary values after smoothing: `(parent_v_sq, (sum P, sum Q))`.
    pub fn smoothed(&self, alpha: f64, targets: FpiTargets) -> (f64, (f64, f64)) {
        let v = if targets.voltage() {
            fpi_smooth(self.parent_v_sq, self.prev_parent_v_sq, alpha)
        } else {
            self.parent_v_sq
        };
        let (p, q) = Self::sums(&self.child_flows);
        let flows = if targets.flows() {
            let (pp, pq) = Self::sums(&self.prev_child_flows);
            (fpi_smooth(p, pp, alpha), fpi_smooth(q, pq, alpha))
        } else {
            (p, q)
        };
        (v, flows)
    }
}

/// Per-step event markers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AgentFlags {
    /// Closed form had no real solution; previous setpoint held.
    pub fallback: bool,
    pub voltage_bound: bool,
    pub upper_limit: bool,
    pub lower_limit: bool,
    /// Voltage projection had no real root; only inverter limits applied.
    pub projection_unreachable: bool,
}

impl AgentFlags {
    /// Compact `|`-separated label, empty when no event occurred.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.fallback {
            parts.push("fallback");
        }
        if self.voltage_bound {
            parts.push("vbound");
        }
        if self.upper_limit {
            parts.push("upper");
        }
        if self.lower_limit {
            parts.push("lower");
        }
        if self.projection_unreachable {
            parts.push("unreachable");
        }
        parts.join("|")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentState {
    pub bus: usize,
    pub mode: ControlMode,
    pub snapshot: NeighborSnapshot,
    /// Current setpoint: `q_D` in Volt-Var mode, `p_D` in Volt-Watt mode.
    pub dispatch: f64,
    pub alpha: f64,
    pub fpi: FpiTargets,
    pub flags: AgentFlags,
}

/// Local data an agent owns for one step.
#[derive(Clone, Copy, Debug)]
pub struct LocalInputs<'a> {
    pub bus_id: &'a str,
    pub line: &'a Line,
    /// Load at the agent's bus, already scaled by the step's multiplier.
    pub load: (f64, f64),
    pub der: &'a DerSpec,
    pub p_avail: f64,
    pub voltage_bounds: (f64, f64),
}

impl AgentState {
    /// The `(p_D, q_D)` injection this agent implements.
    pub fn injection(&self, p_avail: f64) -> (f64, f64) {
        match self.mode {
            ControlMode::Vvc => (p_avail, self.dispatch),
            ControlMode::Vwc => (self.dispatch, 0.0),
        }
    }

    /// Builds this agent's reduced problem from its smoothed boundary values.
    pub fn subproblem(&self, local: &LocalInputs<'_>) -> Result<NodeSubproblem, crate::error::ClosedFormError> {
        let (v, flows) = self.snapshot.smoothed(self.alpha, self.fpi);
        build_subproblem(SubproblemInputs {
            bus: local.bus_id,
            mode: self.mode,
            parent_v_sq: v,
            child_flow: flows,
            load: local.load,
            der_available: local.p_avail,
            der_rating: local.der.rating_s,
            line: local.line,
            voltage_bounds: local.voltage_bounds,
        })
    }
}

fn der_limits(mode: ControlMode, der: &DerSpec, p_avail: f64) -> (f64, f64) {
    match mode {
        ControlMode::Vvc => {
            let q = (der.rating_s * der.rating_s - p_avail * p_avail).max(0.0).sqrt();
            (-q, q)
        }
        ControlMode::Vwc => (0.0, der.rating_s.min(p_avail).max(0.0)),
    }
}

/// One agent round: smooth, reduce, solve in closed form, implement.
///
/// Returns the new setpoint and the updated state. Infeasible closed forms
/// hold the previous setpoint (clipped to this step's inverter limits) and
/// set `flags.fallback`.
pub fn agent_step(state: &AgentState, local: &LocalInputs<'_>) -> (f64, AgentState) {
    let mut next = state.clone();
    next.flags = AgentFlags::default();
    let outcome = state.subproblem(local).and_then(|sp| match state.mode {
        ControlMode::Vvc => vvc_dispatch(&sp),
        ControlMode::Vwc => vwc_dispatch(&sp),
    });
    match outcome {
        Ok(d) => {
            next.dispatch = d.value;
            next.flags.voltage_bound = d.binding == Binding::VoltageBound;
            next.flags.upper_limit = d.binding == Binding::UpperLimit;
            next.flags.lower_limit = d.binding == Binding::LowerLimit;
            next.flags.projection_unreachable = d.projection_unreachable();
        }
        Err(e) => {
            log::warn!("agent at bus '{}' holds its setpoint: {e}", local.bus_id);
            let (lo, hi) = der_limits(state.mode, local.der, local.p_avail);
            next.dispatch = state.dispatch.clamp(lo, hi);
            next.flags.fallback = true;
        }
    }
    (next.dispatch, next)
}

/// Which scalar the trace reports as the objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObjectiveKind {
    /// Total resistive loss `sum r l`.
    Loss,
    /// Total DER active output `sum p_D`.
    Generation,
}

impl ObjectiveKind {
    pub fn for_mode(mode: Option<ControlMode>) -> Self {
        match mode {
            Some(ControlMode::Vwc) => ObjectiveKind::Generation,
            _ => ObjectiveKind::Loss,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentRecord {
    pub bus: usize,
    pub dispatch: f64,
    pub flags: AgentFlags,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NodeTiming {
    pub step: usize,
    pub bus: usize,
    pub closed_form_ns: f64,
    pub oracle_ns: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub inputs: StepInputs,
    pub dispatch: DispatchSet,
    pub state: NetworkState,
    pub total_loss: f64,
    pub total_der_p: f64,
    pub objective: f64,
    pub violations: ViolationReport,
    pub residual: BranchFlowResidual,
    pub agents: Vec<AgentRecord>,
    /// Largest setpoint change from the previous step (pu).
    pub max_dispatch_change: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulationTrace {
    pub objective_kind: ObjectiveKind,
    /// Uncontrolled state the agents start from (step 0).
    pub initial: StepRecord,
    /// One record per controller step, `steps[t - 1]` for step `t`.
    pub steps: Vec<StepRecord>,
    pub timing: Vec<NodeTiming>,
}

impl SimulationTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn objective_series(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.objective).collect()
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SimulationOptions {
    /// Time each closed-form node solve and the numeric oracle on the same subproblem.
    pub timing: bool,
}

#[allow(clippy::too_many_arguments)]
fn record(
    scenario: &Scenario,
    kind: ObjectiveKind,
    step: usize,
    inputs: StepInputs,
    dispatch: DispatchSet,
    state: NetworkState,
    agents: Vec<AgentRecord>,
    max_dispatch_change: f64,
) -> StepRecord {
    let feeder = &scenario.feeder;
    let total_loss = state.total_loss(feeder);
    let total_der_p = dispatch.p.iter().sum();
    StepRecord {
        step,
        inputs,
        residual: branch_flow_residual(feeder, &state, &dispatch, inputs.load_mult),
        violations: check_operational_limits(feeder, &state, inputs.v_min_sq, inputs.v_max_sq),
        total_loss,
        total_der_p,
        objective: match kind {
            ObjectiveKind::Loss => total_loss,
            ObjectiveKind::Generation => total_der_p,
        },
        dispatch,
        state,
        agents,
        max_dispatch_change,
    }
}

/// Setpoints the agents start from: no reactive support, full active output.
pub fn initial_setpoint(mode: ControlMode, der: &DerSpec, pv_mult: f64) -> f64 {
    match mode {
        ControlMode::Vvc => 0.0,
        ControlMode::Vwc => der.rating_s.min(der.available_p(pv_mult)),
    }
}

pub fn run_simulation(scenario: &Scenario) -> Result<SimulationTrace, SimulationError> {
    run_simulation_with(scenario, SimulationOptions::default())
}

pub fn run_simulation_with(scenario: &Scenario, opts: SimulationOptions) -> Result<SimulationTrace, SimulationError> {
    scenario.validate()?;
    let feeder = &scenario.feeder;
    let n = feeder.len();
    let kind = ObjectiveKind::for_mode(scenario.uniform_mode());
    let der_buses = feeder.der_buses();

    let inputs0 = scenario.inputs(0);
    let mut dispatch0 = DispatchSet::zeros(n);
    let mut agents: Vec<AgentState> = Vec::with_capacity(der_buses.len());
    for &j in &der_buses {
        let der = feeder.bus(j).der.expect("DER bus");
        let x = initial_setpoint(der.mode, &der, inputs0.pv_mult);
        let a = AgentState {
            bus: j,
            mode: der.mode,
            snapshot: NeighborSnapshot { parent_v_sq: 0.0, child_flows: vec![], prev_parent_v_sq: 0.0, prev_child_flows: vec![] },
            dispatch: x,
            alpha: scenario.alpha,
            fpi: scenario.fpi,
            flags: AgentFlags::default(),
        };
        let (p, q) = a.injection(der.available_p(inputs0.pv_mult));
        dispatch0.set(j, p, q);
        agents.push(a);
    }
    let state0 = solve_power_flow(feeder, &dispatch0, inputs0.v_root_sq, inputs0.load_mult, DEFAULT_TOL, DEFAULT_MAX_ITER)
        .map_err(|source| SimulationError::PowerFlow {
            step: 0,
            source,
            partial: Box::new(SimulationTrace {
                objective_kind: kind,
                initial: record(scenario, kind, 0, inputs0, dispatch0.clone(), empty_state(feeder), vec![], 0.0),
                steps: vec![],
                timing: vec![],
            }),
        })?;
    for a in agents.iter_mut() {
        a.snapshot = NeighborSnapshot::initial(feeder, a.bus, &state0);
    }
    let initial_agents = agents
        .iter()
        .map(|a| AgentRecord { bus: a.bus, dispatch: a.dispatch, flags: a.flags })
        .collect();
    let initial = record(scenario, kind, 0, inputs0, dispatch0, state0, initial_agents, 0.0);

    let mut trace = SimulationTrace { objective_kind: kind, initial, steps: Vec::with_capacity(scenario.horizon), timing: vec![] };

    for t in 1..=scenario.horizon {
        let inputs = scenario.inputs(t);
        let results: Vec<(AgentState, Option<NodeTiming>)> = agents
            .par_iter()
            .map(|a| {
                let bus = feeder.bus(a.bus);
                let der = bus.der.expect("DER bus");
                let line = feeder.line(feeder.line_into(a.bus).expect("non-root"));
                let local = LocalInputs {
                    bus_id: &bus.id,
                    line,
                    load: (bus.load_p * inputs.load_mult, bus.load_q * inputs.load_mult),
                    der: &der,
                    p_avail: der.available_p(inputs.pv_mult),
                    voltage_bounds: (inputs.v_min_sq, inputs.v_max_sq),
                };
                let started = Instant::now();
                let (_, next) = agent_step(a, &local);
                let timing = opts.timing.then(|| {
                    let closed_form_ns = started.elapsed().as_nanos() as f64;
                    let oracle_ns = a
                        .subproblem(&local)
                        .ok()
                        .map(|sp| time_oracle(&sp))
                        .unwrap_or(f64::NAN);
                    NodeTiming { step: t, bus: a.bus, closed_form_ns, oracle_ns }
                });
                (next, timing)
            })
            .collect();

        let mut dispatch = DispatchSet::zeros(n);
        let mut change: f64 = 0.0;
        let mut records = Vec::with_capacity(results.len());
        for ((next, timing), prev) in results.into_iter().zip(&agents) {
            let der = feeder.bus(next.bus).der.expect("DER bus");
            let (p, q) = next.injection(der.available_p(inputs.pv_mult));
            dispatch.set(next.bus, p, q);
            change = change.max((next.dispatch - prev.dispatch).abs());
            records.push((next, timing));
        }

        let state = match solve_power_flow(feeder, &dispatch, inputs.v_root_sq, inputs.load_mult, DEFAULT_TOL, DEFAULT_MAX_ITER) {
            Ok(s) => s,
            Err(source) => {
                return Err(SimulationError::PowerFlow { step: t, source, partial: Box::new(trace) });
            }
        };

        // exchange: every agent measures and receives its neighbors' values
        let mut agent_records = Vec::with_capacity(records.len());
        agents.clear();
        for (mut next, timing) in records {
            let (v, flows) = NeighborSnapshot::observe(feeder, next.bus, &state);
            next.snapshot.advance(v, flows);
            agent_records.push(AgentRecord { bus: next.bus, dispatch: next.dispatch, flags: next.flags });
            trace.timing.extend(timing);
            agents.push(next);
        }
        trace.steps.push(record(scenario, kind, t, inputs, dispatch, state, agent_records, change));
    }
    Ok(trace)
}

fn empty_state(feeder: &Feeder) -> NetworkState {
    let m = feeder.lines().len();
    NetworkState { v_sq: vec![0.0; feeder.len()], p_flow: vec![0.0; m], q_flow: vec![0.0; m], i_sq: vec![0.0; m], iterations: 0 }
}

fn time_oracle(sp: &NodeSubproblem) -> f64 {
    let objective = match sp.mode {
        ControlMode::Vvc => OracleObjective::MinX4,
        ControlMode::Vwc => OracleObjective::MaxX5,
    };
    let started = Instant::now();
    let _ = std::hint::black_box(node_numeric_oracle(std::hint::black_box(sp), objective));
    started.elapsed().as_nanos() as f64
}
