//! Closed-form node dispatch.
//!
//! Each DER agent holds its parent voltage and the flows to its children
//! fixed, which reduces the network around its line `ij` to five variables
//! `x = (P_ij, Q_ij, v_j, l_ij, x5)` where `x5` is `q_Dj` (Volt-Var) or
//! `p_Dj` (Volt-Watt). Three linear equalities leave a one-parameter family
//! on an ellipse in the `(x4, x5)` plane; the optimum is found on that ellipse
//! and then projected onto the voltage and inverter limits.

mod conic;
mod dispatch;
mod oracle;

pub use conic::{conic_descriptor, ConicDescriptor};
pub use dispatch::{
    vvc_dispatch, vvc_projection_coefficients, vvc_unconstrained, vvc_voltage_projection,
    vwc_dispatch, vwc_projection_coefficients, vwc_voltage_projection, Binding, DispatchOutcome,
    QuadraticCoefficients, VoltageProjection,
};
pub use oracle::{node_numeric_oracle, OracleBinding, OracleObjective, OracleSolution, ORACLE_SCAN_POINTS};

use crate::error::ClosedFormError;
use crate::feeder::{ControlMode, Line};

/// Index of each variable in the bound arrays.
pub const X_P: usize = 0;
pub const X_Q: usize = 1;
pub const X_V: usize = 2;
pub const X_L: usize = 3;
pub const X_DER: usize = 4;

/// One agent's reduced problem.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NodeSubproblem {
    pub mode: ControlMode,
    /// Aggregated active demand seen through the line. Includes `-p_D` in Volt-Var mode.
    pub big_p: f64,
    pub big_q: f64,
    /// Parent squared voltage.
    pub v_up: f64,
    /// Line resistance.
    pub z1: f64,
    /// Line reactance.
    pub z2: f64,
    pub lower: [f64; 5],
    pub upper: [f64; 5],
}

impl NodeSubproblem {
    pub fn z_sq(&self) -> f64 {
        self.z1 * self.z1 + self.z2 * self.z2
    }

    /// Receiving-end power of the line for a given decision `x5`.
    pub fn receiving_power(&self, x5: f64) -> (f64, f64) {
        match self.mode {
            ControlMode::Vvc => (self.big_p, self.big_q - x5),
            ControlMode::Vwc => (self.big_p - x5, self.big_q),
        }
    }

    /// Solves the three linear equalities for `(x1, x2, x3)` given `(x4, x5)`.
    pub fn linear_solution(&self, x4: f64, x5: f64) -> [f64; 3] {
        let (pr, qr) = self.receiving_power(x5);
        let x1 = self.z1 * x4 + pr;
        let x2 = self.z2 * x4 + qr;
        let x3 = self.v_up - 2.0 * (self.z1 * x1 + self.z2 * x2) + self.z_sq() * x4;
        [x1, x2, x3]
    }

    /// Residual of the quadratic constraint `V x4 = x1^2 + x2^2` at `(x4, x5)`.
    pub fn ellipse_residual(&self, x4: f64, x5: f64) -> f64 {
        let [x1, x2, _] = self.linear_solution(x4, x5);
        x1 * x1 + x2 * x2 - self.v_up * x4
    }

    /// `x4` as estimated by the projection step: current from the receiving-end
    /// power at the parent voltage, ignoring the line's own losses.
    pub fn x4_approx(&self, x5: f64) -> f64 {
        let (pr, qr) = self.receiving_power(x5);
        (pr * pr + qr * qr) / self.v_up
    }

    pub fn check(&self) -> Result<(), ClosedFormError> {
        let bad = |m: &str| Err(ClosedFormError::InvalidSubproblem(m.to_string()));
        if !(self.v_up > 0.0) {
            return bad("parent voltage must be positive");
        }
        if !(self.z_sq() > 0.0) || self.z1 < 0.0 || self.z2 < 0.0 {
            return bad("line impedance must be nonnegative and nonzero");
        }
        if self.lower.iter().zip(&self.upper).any(|(l, u)| !(l <= u)) {
            return bad("lower bound exceeds upper bound");
        }
        if !(self.big_p.is_finite() && self.big_q.is_finite()) {
            return bad("non-finite aggregated power");
        }
        Ok(())
    }
}

/// Inputs to [`build_subproblem`] observed by one agent.
#[derive(Clone, Copy, Debug)]
pub struct SubproblemInputs<'a> {
    pub bus: &'a str,
    pub mode: ControlMode,
    pub parent_v_sq: f64,
    /// Sum of active/reactive flows into the children at the previous step.
    pub child_flow: (f64, f64),
    pub load: (f64, f64),
    pub der_available: f64,
    pub der_rating: f64,
    pub line: &'a Line,
    pub voltage_bounds: (f64, f64),
}

/// Assembles the reduced problem for one agent.
///
/// Volt-Var: `P = sum P_jk + p_L - p_avail`, reactive limit `sqrt(S^2 - p_avail^2)`.
/// Volt-Watt: `P = sum P_jk + p_L`, active output within `[0, min(S, p_avail)]`.
pub fn build_subproblem(inp: SubproblemInputs<'_>) -> Result<NodeSubproblem, ClosedFormError> {
    if !(inp.parent_v_sq > 0.0) {
        return Err(ClosedFormError::InvalidSubproblem(format!(
            "bus '{}': parent voltage must be positive",
            inp.bus
        )));
    }
    let (child_p, child_q) = inp.child_flow;
    let (load_p, load_q) = inp.load;
    let big_q = child_q + load_q;
    let (big_p, l5, u5) = match inp.mode {
        ControlMode::Vvc => {
            if inp.der_available > inp.der_rating {
                return Err(ClosedFormError::CapabilityEmpty {
                    bus: inp.bus.to_string(),
                    p_avail: inp.der_available,
                    rating: inp.der_rating,
                });
            }
            let q_max = (inp.der_rating * inp.der_rating - inp.der_available * inp.der_available).sqrt();
            (child_p + load_p - inp.der_available, -q_max, q_max)
        }
        ControlMode::Vwc => (child_p + load_p, 0.0, inp.der_rating.min(inp.der_available).max(0.0)),
    };
    let (l3, u3) = inp.voltage_bounds;
    let sp = NodeSubproblem {
        mode: inp.mode,
        big_p,
        big_q,
        v_up: inp.parent_v_sq,
        z1: inp.line.r,
        z2: inp.line.x,
        lower: [f64::NEG_INFINITY, f64::NEG_INFINITY, l3, 0.0, l5],
        upper: [f64::INFINITY, f64::INFINITY, u3, inp.line.ampacity_sq, u5],
    };
    sp.check()?;
    Ok(sp)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line() -> Line {
        Line { from: 0, to: 1, r: 0.01, x: 0.02, ampacity_sq: 2.0 }
    }

    fn inputs(mode: ControlMode, line: &Line) -> SubproblemInputs<'_> {
        SubproblemInputs {
            bus: "b",
            mode,
            parent_v_sq: 1.0,
            child_flow: (0.0, 0.0),
            load: (0.0, 0.0),
            der_available: 0.8,
            der_rating: 1.0,
            line,
            voltage_bounds: (0.95f64.powi(2), 1.05f64.powi(2)),
        }
    }

    #[test]
    fn vvc_bounds_from_capability_circle() {
        let l = line();
        let sp = build_subproblem(inputs(ControlMode::Vvc, &l)).unwrap();
        assert!((sp.big_p + 0.8).abs() < 1e-15);
        assert!((sp.upper[X_DER] - 0.6).abs() < 1e-12);
        assert!((sp.lower[X_DER] + 0.6).abs() < 1e-12);
        assert_eq!(sp.upper[X_V], 1.05f64.powi(2));
        assert_eq!(sp.upper[X_L], 2.0);
    }

    #[test]
    fn vwc_sums_children_and_load() {
        let l = line();
        let mut inp = inputs(ControlMode::Vwc, &l);
        inp.child_flow = (0.2, 0.1);
        inp.load = (0.05, 0.02);
        let sp = build_subproblem(inp).unwrap();
        assert!((sp.big_p - 0.25).abs() < 1e-15);
        assert!((sp.big_q - 0.12).abs() < 1e-15);
        assert_eq!(sp.lower[X_DER], 0.0);
        assert_eq!(sp.upper[X_DER], 0.8);
        inp.der_available = 1.5;
        assert_eq!(build_subproblem(inp).unwrap().upper[X_DER], 1.0);
    }

    #[test]
    fn empty_capability_circle_names_der() {
        let l = line();
        let mut inp = inputs(ControlMode::Vvc, &l);
        inp.der_available = 1.1;
        let err = build_subproblem(inp).unwrap_err();
        assert!(err.to_string().contains("bus 'b'"));
        inp.der_available = 0.5;
        inp.parent_v_sq = 0.0;
        assert!(build_subproblem(inp).is_err());
    }

    #[test]
    fn linear_solution_satisfies_equalities() {
        let l = line();
        let mut inp = inputs(ControlMode::Vvc, &l);
        inp.child_flow = (0.3, -0.1);
        let sp = build_subproblem(inp).unwrap();
        let (x4, x5) = (0.07, 0.15);
        let [x1, x2, x3] = sp.linear_solution(x4, x5);
        // parametric form: particular solution plus x4 and x5 directions
        let z2 = sp.z_sq();
        let e1 = x1 - (sp.big_p + sp.z1 * x4);
        let e2 = x2 - (sp.big_q + sp.z2 * x4 - x5);
        let e3 = x3 - (sp.v_up - 2.0 * (sp.z1 * sp.big_p + sp.z2 * sp.big_q) - z2 * x4 + 2.0 * sp.z2 * x5);
        assert!(e1.abs() < 1e-15 && e2.abs() < 1e-15 && e3.abs() < 1e-15, "{e1} {e2} {e3}");
    }
}
