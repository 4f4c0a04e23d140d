//! C ABI over the endico core library.
//!
//! Objects cross the boundary as opaque handles created by `*_load` / `*_new`
//! functions and released with the matching `*_free`. Every fallible call
//! returns an [`EndicoStatus`]; on failure the message is available from
//! [`endico_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use endico::agents::{run_simulation, SimulationTrace};
use endico::closedform::{vvc_dispatch, vwc_dispatch, Binding, NodeSubproblem};
use endico::feeder::{ControlMode, Feeder};
use endico::powerflow::{solve_power_flow, DispatchSet, DEFAULT_MAX_ITER, DEFAULT_TOL};
use endico::scenario::{load_scenario, Scenario};
use endico::{ClosedFormError, FeederError, PowerFlowError, SimulationError};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EndicoStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Validation = 5,
    PowerFlow = 6,
    ClosedForm = 7,
    OutOfRange = 8,
    Panic = 99,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EndicoMode {
    Vvc = 0,
    Vwc = 1,
}

impl From<EndicoMode> for ControlMode {
    fn from(m: EndicoMode) -> Self {
        match m {
            EndicoMode::Vvc => ControlMode::Vvc,
            EndicoMode::Vwc => ControlMode::Vwc,
        }
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EndicoBinding {
    Unconstrained = 0,
    VoltageBound = 1,
    UpperLimit = 2,
    LowerLimit = 3,
}

/// Reduced node problem. Bound arrays are indexed P, Q, v, l, DER setpoint.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EndicoSubproblem {
    pub mode: EndicoMode,
    pub big_p: f64,
    pub big_q: f64,
    pub v_up: f64,
    pub z1: f64,
    pub z2: f64,
    pub lower: [f64; 5],
    pub upper: [f64; 5],
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EndicoDispatch {
    pub value: f64,
    pub binding: EndicoBinding,
    /// Zero when the voltage projection has no real root.
    pub has_voltage_bound: bool,
    pub voltage_bound: f64,
}

pub struct EndicoFeeder {
    inner: Feeder,
}

pub struct EndicoScenario {
    inner: Scenario,
}

pub struct EndicoTrace {
    inner: SimulationTrace,
}

struct Failure(EndicoStatus, String);

impl From<FeederError> for Failure {
    fn from(e: FeederError) -> Self {
        let status = match e {
            FeederError::Io { .. } => EndicoStatus::Io,
            FeederError::Parse(_) => EndicoStatus::Parse,
            FeederError::Profile(_) | FeederError::Invalid(_) => EndicoStatus::Validation,
        };
        Failure(status, e.to_string())
    }
}

impl From<PowerFlowError> for Failure {
    fn from(e: PowerFlowError) -> Self {
        Failure(EndicoStatus::PowerFlow, e.to_string())
    }
}

impl From<ClosedFormError> for Failure {
    fn from(e: ClosedFormError) -> Self {
        Failure(EndicoStatus::ClosedForm, e.to_string())
    }
}

impl From<SimulationError> for Failure {
    fn from(e: SimulationError) -> Self {
        match e {
            SimulationError::Feeder(e) => e.into(),
            SimulationError::ClosedForm(e) => e.into(),
            e @ SimulationError::PowerFlow { .. } => Failure(EndicoStatus::PowerFlow, e.to_string()),
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> EndicoStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EndicoStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            EndicoStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(EndicoStatus::NullPointer, format!("{what} is null"))
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn as_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn as_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(EndicoStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

fn into_handle<T>(out: &mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

/// Message of the last failed call on this thread, or NULL after a success.
/// The pointer stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn endico_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn endico_feeder_load(path: *const c_char, out: *mut *mut EndicoFeeder) -> EndicoStatus {
    guard(|| {
        let out = as_mut(out, "out")?;
        let f = endico::load_feeder(as_str(path, "path")?)?;
        into_handle(out, EndicoFeeder { inner: f });
        Ok(())
    })
}

/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn endico_feeder_from_json(json: *const c_char, out: *mut *mut EndicoFeeder) -> EndicoStatus {
    guard(|| {
        let out = as_mut(out, "out")?;
        let f = Feeder::from_json(as_str(json, "json")?)?;
        into_handle(out, EndicoFeeder { inner: f });
        Ok(())
    })
}

/// Number of buses, 0 for a NULL handle.
///
/// # Safety
/// `feeder` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn endico_feeder_bus_count(feeder: *const EndicoFeeder) -> usize {
    feeder.as_ref().map_or(0, |f| f.inner.len())
}

/// # Safety
/// `feeder` must be NULL or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn endico_feeder_free(feeder: *mut EndicoFeeder) {
    if !feeder.is_null() {
        drop(Box::from_raw(feeder));
    }
}

/// Solves the power flow for per-bus injections `p[n]`, `q[n]` and writes
/// squared bus voltages to `v_sq_out[n]`. `n` must equal the bus count.
///
/// # Safety
/// Arrays must hold `n` elements.
#[no_mangle]
pub unsafe extern "C" fn endico_power_flow(
    feeder: *const EndicoFeeder,
    p: *const f64,
    q: *const f64,
    n: usize,
    v_root_sq: f64,
    load_mult: f64,
    v_sq_out: *mut f64,
) -> EndicoStatus {
    guard(|| {
        let f = &as_ref(feeder, "feeder")?.inner;
        if p.is_null() || q.is_null() || v_sq_out.is_null() {
            return Err(null("array"));
        }
        if n != f.len() {
            return Err(Failure(EndicoStatus::InvalidArgument, format!("n = {n}, feeder has {} buses", f.len())));
        }
        let d = DispatchSet {
            p: std::slice::from_raw_parts(p, n).to_vec(),
            q: std::slice::from_raw_parts(q, n).to_vec(),
        };
        let state = solve_power_flow(f, &d, v_root_sq, load_mult, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
        std::slice::from_raw_parts_mut(v_sq_out, n).copy_from_slice(&state.v_sq);
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn endico_scenario_load(path: *const c_char, out: *mut *mut EndicoScenario) -> EndicoStatus {
    guard(|| {
        let out = as_mut(out, "out")?;
        let s = load_scenario(as_str(path, "path")?)?;
        into_handle(out, EndicoScenario { inner: s });
        Ok(())
    })
}

/// Constant-input scenario over a copy of `feeder`.
///
/// # Safety
/// `feeder` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn endico_scenario_steady(
    feeder: *const EndicoFeeder,
    horizon: usize,
    load_mult: f64,
    pv_mult: f64,
    alpha: f64,
    out: *mut *mut EndicoScenario,
) -> EndicoStatus {
    guard(|| {
        let out = as_mut(out, "out")?;
        let f = as_ref(feeder, "feeder")?.inner.clone();
        let s = Scenario::steady(f, horizon, load_mult, pv_mult, alpha);
        s.validate()?;
        into_handle(out, EndicoScenario { inner: s });
        Ok(())
    })
}

/// Switches every DER of the scenario to `mode`.
///
/// # Safety
/// `scenario` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn endico_scenario_set_mode(scenario: *mut EndicoScenario, mode: EndicoMode) -> EndicoStatus {
    guard(|| {
        let s = &mut as_mut(scenario, "scenario")?.inner;
        s.feeder = s.feeder.with_mode(mode.into())?;
        Ok(())
    })
}

/// # Safety
/// `scenario` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn endico_scenario_set_alpha(scenario: *mut EndicoScenario, alpha: f64) -> EndicoStatus {
    guard(|| {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Failure(EndicoStatus::InvalidArgument, format!("alpha must be finite and nonnegative, got {alpha}")));
        }
        as_mut(scenario, "scenario")?.inner.alpha = alpha;
        Ok(())
    })
}

/// # Safety
/// `scenario` must be NULL or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn endico_scenario_free(scenario: *mut EndicoScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Runs the distributed controller over the scenario horizon.
///
/// # Safety
/// `scenario` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn endico_run(scenario: *const EndicoScenario, out: *mut *mut EndicoTrace) -> EndicoStatus {
    guard(|| {
        let out = as_mut(out, "out")?;
        let t = run_simulation(&as_ref(scenario, "scenario")?.inner)?;
        into_handle(out, EndicoTrace { inner: t });
        Ok(())
    })
}

/// Number of controller steps, 0 for a NULL handle.
///
/// # Safety
/// `trace` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn endico_trace_len(trace: *const EndicoTrace) -> usize {
    trace.as_ref().map_or(0, |t| t.inner.len())
}

unsafe fn step_record<'a>(trace: *const EndicoTrace, step: usize) -> Result<&'a endico::agents::StepRecord, Failure> {
    let t = &as_ref(trace, "trace")?.inner;
    match step {
        0 => Ok(&t.initial),
        s if s <= t.len() => Ok(&t.steps[s - 1]),
        s => Err(Failure(EndicoStatus::OutOfRange, format!("step {s} outside 0..={}", t.len()))),
    }
}

/// Objective after `step` (0 is the uncontrolled start): total loss in
/// Volt-Var runs, total DER output in Volt-Watt runs.
///
/// # Safety
/// `trace` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn endico_trace_objective(trace: *const EndicoTrace, step: usize, out: *mut f64) -> EndicoStatus {
    guard(|| {
        let out = as_mut(out, "out")?;
        *out = step_record(trace, step)?.objective;
        Ok(())
    })
}

/// Squared voltage and DER injection at `bus` after `step`.
///
/// # Safety
/// `trace` must be a live handle; output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn endico_trace_bus(
    trace: *const EndicoTrace,
    step: usize,
    bus: usize,
    v_sq: *mut f64,
    p: *mut f64,
    q: *mut f64,
) -> EndicoStatus {
    guard(|| {
        let (v_sq, p, q) = (as_mut(v_sq, "v_sq")?, as_mut(p, "p")?, as_mut(q, "q")?);
        let r = step_record(trace, step)?;
        if bus >= r.state.v_sq.len() {
            return Err(Failure(EndicoStatus::OutOfRange, format!("bus {bus} outside 0..{}", r.state.v_sq.len())));
        }
        *v_sq = r.state.v_sq[bus];
        *p = r.dispatch.p[bus];
        *q = r.dispatch.q[bus];
        Ok(())
    })
}

/// # Safety
/// `trace` must be NULL or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn endico_trace_free(trace: *mut EndicoTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

fn subproblem(sp: &EndicoSubproblem) -> NodeSubproblem {
    NodeSubproblem {
        mode: sp.mode.into(),
        big_p: sp.big_p,
        big_q: sp.big_q,
        v_up: sp.v_up,
        z1: sp.z1,
        z2: sp.z2,
        lower: sp.lower,
        upper: sp.upper,
    }
}

unsafe fn solve_node(
    sp: *const EndicoSubproblem,
    out: *mut EndicoDispatch,
    mode: EndicoMode,
    solve: fn(&NodeSubproblem) -> Result<endico::closedform::DispatchOutcome, ClosedFormError>,
) -> EndicoStatus {
    guard(|| {
        let out = as_mut(out, "out")?;
        let sp = as_ref(sp, "subproblem")?;
        if sp.mode != mode {
            return Err(Failure(EndicoStatus::InvalidArgument, format!("subproblem mode is {:?}", sp.mode)));
        }
        let d = solve(&subproblem(sp))?;
        *out = EndicoDispatch {
            value: d.value,
            binding: match d.binding {
                Binding::Unconstrained => EndicoBinding::Unconstrained,
                Binding::VoltageBound => EndicoBinding::VoltageBound,
                Binding::UpperLimit => EndicoBinding::UpperLimit,
                Binding::LowerLimit => EndicoBinding::LowerLimit,
            },
            has_voltage_bound: d.x5_vub.is_some(),
            voltage_bound: d.x5_vub.unwrap_or(f64::NAN),
        };
        Ok(())
    })
}

/// Closed-form Volt-Var setpoint of one node.
///
/// # Safety
/// `sp` must be readable; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn endico_vvc_dispatch(sp: *const EndicoSubproblem, out: *mut EndicoDispatch) -> EndicoStatus {
    solve_node(sp, out, EndicoMode::Vvc, vvc_dispatch)
}

/// Closed-form Volt-Watt setpoint of one node.
///
/// # Safety
/// `sp` must be readable; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn endico_vwc_dispatch(sp: *const EndicoSubproblem, out: *mut EndicoDispatch) -> EndicoStatus {
    solve_node(sp, out, EndicoMode::Vwc, vwc_dispatch)
}
