//! Distributed closed-form Volt-Var / Volt-Watt control on radial feeders.
//!
//! Per-DER agents compute setpoints from neighbor boundary values using
//! closed-form solutions of their reduced node problem, and are checked
//! against an exact branch-flow solver and centralized search baselines.

// `!(x > 0.0)` style checks are used on purpose so NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agents;
pub mod baseline;
pub mod cli;
pub mod closedform;
pub mod error;
pub mod feeder;
pub mod powerflow;
pub mod report;
pub mod scenario;
pub mod validate;

pub use agents::{run_simulation, SimulationTrace};
pub use error::{BaselineError, ClosedFormError, FeederError, PowerFlowError, SimulationError};
pub use feeder::{load_feeder, topology_order, ControlMode, Feeder};
pub use powerflow::{solve_power_flow, DispatchSet, NetworkState};
pub use scenario::{load_scenario, Scenario};
