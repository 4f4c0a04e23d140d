use crate::error::ClosedFormError;
use crate::feeder::ControlMode;

use super::{NodeSubproblem, X_DER, X_V};

/// Coefficients of `a x5^2 + b x5 + c >= 0`, the voltage upper bound after
/// substituting the loss-free estimate of `x4`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadraticCoefficients {
    pub a_coef: f64,
    pub b_coef: f64,
    pub c_coef: f64,
}

impl QuadraticCoefficients {
    pub fn discriminant(&self) -> f64 {
        self.b_coef * self.b_coef - 4.0 * self.a_coef * self.c_coef
    }

    /// Smaller real root, `None` if the discriminant is negative.
    pub fn smaller_root(&self) -> Option<f64> {
        let disc = self.discriminant();
        if disc < 0.0 || !disc.is_finite() {
            return None;
        }
        let (a, b, c) = (self.a_coef, self.b_coef, self.c_coef);
        // (-b - sqrt(disc)) / 2a, evaluated without cancellation
        let sq = disc.sqrt();
        let root = if b <= 0.0 { 2.0 * c / (-b + sq) } else { (-b - sq) / (2.0 * a) };
        if root.is_finite() {
            Some(root)
        } else {
            // -b + sq == 0 only when b = 0 and c = 0
            Some(0.0)
        }
    }
}

/// Outcome of a voltage-bound projection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum VoltageProjection {
    /// Largest `x5` whose estimated voltage stays at or below the bound.
    Bound(f64),
    /// The quadratic has no real root: the estimated voltage never reaches the bound.
    Unreachable,
}

impl VoltageProjection {
    pub fn bound(self) -> Option<f64> {
        match self {
            VoltageProjection::Bound(x) => Some(x),
            VoltageProjection::Unreachable => None,
        }
    }
}

/// Which term of the dispatch rule set the result.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binding {
    /// Unconstrained minimizer (Volt-Var only).
    Unconstrained,
    VoltageBound,
    UpperLimit,
    LowerLimit,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DispatchOutcome {
    pub value: f64,
    pub binding: Binding,
    pub x5_unconstrained: Option<f64>,
    pub x5_vub: Option<f64>,
}

impl DispatchOutcome {
    pub fn projection_unreachable(&self) -> bool {
        self.x5_vub.is_none()
    }
}

/// Loss-minimizing point of the Volt-Var ellipse with the boxes removed.
///
/// `x4* = (V - 2 P z1 - sqrt(V^2 - 4 V P z1)) / (2 z1^2)` and `x5* = Q + z2 x4*`.
/// The first expression is evaluated in its rationalized form
/// `2 P^2 / (V - 2 P z1 + sqrt(V^2 - 4 V P z1))`, which is equal and stays
/// accurate for small `z1`.
pub fn vvc_unconstrained(sp: &NodeSubproblem) -> Result<(f64, f64), ClosedFormError> {
    let (p, v, z1) = (sp.big_p, sp.v_up, sp.z1);
    let disc = v * v - 4.0 * v * p * z1;
    if disc < 0.0 {
        return Err(ClosedFormError::NegativeDiscriminant(disc));
    }
    let x4 = 2.0 * p * p / (v - 2.0 * p * z1 + disc.sqrt());
    Ok((x4, sp.big_q + sp.z2 * x4))
}

pub fn vvc_projection_coefficients(sp: &NodeSubproblem) -> Result<QuadraticCoefficients, ClosedFormError> {
    let (p, q, v, z1, z2) = (sp.big_p, sp.big_q, sp.v_up, sp.z1, sp.z2);
    if !(z2 > 0.0) {
        return Err(ClosedFormError::UnsupportedLine);
    }
    let zz = sp.z_sq();
    let u3 = sp.upper[X_V];
    Ok(QuadraticCoefficients {
        a_coef: zz / (2.0 * z2 * v),
        b_coef: -(zz * q / (z2 * v) + 1.0),
        c_coef: q + z1 / z2 * p + (u3 - v) / (2.0 * z2) + zz / (2.0 * z2 * v) * (p * p + q * q),
    })
}

pub fn vwc_projection_coefficients(sp: &NodeSubproblem) -> Result<QuadraticCoefficients, ClosedFormError> {
    let (p, q, v, z1, z2) = (sp.big_p, sp.big_q, sp.v_up, sp.z1, sp.z2);
    if !(z1 > 0.0) {
        return Err(ClosedFormError::UnsupportedLine);
    }
    let zz = sp.z_sq();
    let u3 = sp.upper[X_V];
    Ok(QuadraticCoefficients {
        a_coef: zz / (2.0 * z1 * v),
        b_coef: -(zz * p / (z1 * v) + 1.0),
        c_coef: p + z2 / z1 * q + (u3 - v) / (2.0 * z1) + zz / (2.0 * z1 * v) * (p * p + q * q),
    })
}

/// Upper limit on reactive injection from the voltage bound.
pub fn vvc_voltage_projection(sp: &NodeSubproblem) -> Result<VoltageProjection, ClosedFormError> {
    let coef = vvc_projection_coefficients(sp)?;
    Ok(coef.smaller_root().map_or(VoltageProjection::Unreachable, VoltageProjection::Bound))
}

/// Upper limit on active injection from the voltage bound.
pub fn vwc_voltage_projection(sp: &NodeSubproblem) -> Result<VoltageProjection, ClosedFormError> {
    let coef = vwc_projection_coefficients(sp)?;
    Ok(coef.smaller_root().map_or(VoltageProjection::Unreachable, VoltageProjection::Bound))
}

fn expect_mode(sp: &NodeSubproblem, mode: ControlMode) -> Result<(), ClosedFormError> {
    if sp.mode != mode {
        return Err(ClosedFormError::InvalidSubproblem(format!(
            "expected a {mode} subproblem, got {}",
            sp.mode
        )));
    }
    Ok(())
}

/// Volt-Var setpoint: `min{x5*, x5_vub, u5}`, then raised to `l5` if below it.
///
/// An unreachable voltage bound leaves only the inverter limits. A negative
/// discriminant in the unconstrained step is returned as an error so the
/// caller can hold its previous setpoint.
pub fn vvc_dispatch(sp: &NodeSubproblem) -> Result<DispatchOutcome, ClosedFormError> {
    expect_mode(sp, ControlMode::Vvc)?;
    let (_, x5_star) = vvc_unconstrained(sp)?;
    let x5_vub = vvc_voltage_projection(sp)?.bound();
    let (l5, u5) = (sp.lower[X_DER], sp.upper[X_DER]);

    let (mut value, mut binding) = if x5_star <= u5 {
        (x5_star, Binding::Unconstrained)
    } else {
        (u5, Binding::UpperLimit)
    };
    if let Some(vub) = x5_vub {
        if vub < value {
            value = vub;
            binding = Binding::VoltageBound;
        }
    }
    if value < l5 {
        value = l5;
        binding = Binding::LowerLimit;
    }
    Ok(DispatchOutcome { value, binding, x5_unconstrained: Some(x5_star), x5_vub })
}

/// Volt-Watt setpoint: `min{x5_vub, u5}`, floored at zero.
pub fn vwc_dispatch(sp: &NodeSubproblem) -> Result<DispatchOutcome, ClosedFormError> {
    expect_mode(sp, ControlMode::Vwc)?;
    let x5_vub = vwc_voltage_projection(sp)?.bound();
    let (l5, u5) = (sp.lower[X_DER], sp.upper[X_DER]);
    let (mut value, mut binding) = (u5, Binding::UpperLimit);
    if let Some(vub) = x5_vub {
        if vub < value {
            value = vub;
            binding = Binding::VoltageBound;
        }
    }
    if value < l5 {
        value = l5;
        binding = Binding::LowerLimit;
    }
    Ok(DispatchOutcome { value, binding, x5_unconstrained: None, x5_vub })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sp(mode: ControlMode, p: f64, q: f64, v: f64, z1: f64, z2: f64, u5: f64) -> NodeSubproblem {
        let l5 = match mode {
            ControlMode::Vvc => -u5,
            ControlMode::Vwc => 0.0,
        };
        NodeSubproblem {
            mode,
            big_p: p,
            big_q: q,
            v_up: v,
            z1,
            z2,
            lower: [f64::NEG_INFINITY, f64::NEG_INFINITY, 0.95f64.powi(2), 0.0, l5],
            upper: [f64::INFINITY, f64::INFINITY, 1.05f64.powi(2), 100.0, u5],
        }
    }

    #[test]
    fn no_active_demand_gives_zero_current() {
        let s = sp(ControlMode::Vvc, 0.0, 0.3, 1.0, 0.02, 0.04, 1.0);
        let (x4, x5) = vvc_unconstrained(&s).unwrap();
        assert_eq!(x4, 0.0);
        assert_eq!(x5, 0.3);
    }

    #[test]
    fn rationalized_form_equals_printed_form() {
        let s = sp(ControlMode::Vvc, 0.5, 0.2, 1.0, 0.01, 0.01, 1.0);
        let (x4, _) = vvc_unconstrained(&s).unwrap();
        let printed = (1.0 - 2.0 * 0.5 * 0.01 - (1.0f64 - 4.0 * 0.5 * 0.01).sqrt()) / (2.0 * 1e-4);
        assert!((x4 - printed).abs() < 1e-10, "{x4} {printed}");
        assert!(s.ellipse_residual(x4, 0.2 + 0.01 * x4).abs() < 1e-12);
    }

    #[test]
    fn negative_discriminant_is_reported() {
        let s = sp(ControlMode::Vvc, 30.0, 0.0, 1.0, 0.05, 0.05, 1.0);
        assert!(matches!(vvc_unconstrained(&s), Err(ClosedFormError::NegativeDiscriminant(_))));
        assert!(vvc_dispatch(&s).is_err());
    }

    #[test]
    fn parent_at_bound_leaves_no_headroom() {
        let mut s = sp(ControlMode::Vvc, 0.0, 0.0, 1.05f64.powi(2), 0.01, 0.02, 1.0);
        let c = vvc_projection_coefficients(&s).unwrap();
        assert_eq!(c.c_coef, 0.0);
        assert_eq!(vvc_voltage_projection(&s).unwrap(), VoltageProjection::Bound(0.0));
        s.mode = ControlMode::Vwc;
        s.lower[X_DER] = 0.0;
        assert_eq!(vwc_voltage_projection(&s).unwrap(), VoltageProjection::Bound(0.0));
    }

    #[test]
    fn projection_reproduces_bound_under_estimate() {
        for &(mode, p, q) in &[
            (ControlMode::Vvc, -0.5, 0.0),
            (ControlMode::Vvc, 0.2, 0.1),
            (ControlMode::Vwc, 0.1, 0.05),
            (ControlMode::Vwc, -0.3, 0.2),
        ] {
            let s = sp(mode, p, q, 1.0, 0.01, 0.01, 2.0);
            let proj = match mode {
                ControlMode::Vvc => vvc_voltage_projection(&s),
                ControlMode::Vwc => vwc_voltage_projection(&s),
            };
            let x5 = proj.unwrap().bound().unwrap();
            let (pr, qr) = s.receiving_power(x5);
            let x4 = s.x4_approx(x5);
            let v = s.v_up - 2.0 * (s.z1 * (pr + s.z1 * x4) + s.z2 * (qr + s.z2 * x4)) + s.z_sq() * x4;
            assert!((v - s.upper[X_V]).abs() < 1e-8, "{mode:?} {v}");
        }
    }

    #[test]
    fn zero_component_lines_are_unsupported() {
        let s = sp(ControlMode::Vvc, 0.1, 0.1, 1.0, 0.01, 0.0, 1.0);
        assert_eq!(vvc_voltage_projection(&s), Err(ClosedFormError::UnsupportedLine));
        let s = sp(ControlMode::Vwc, 0.1, 0.1, 1.0, 0.0, 0.01, 1.0);
        assert_eq!(vwc_voltage_projection(&s), Err(ClosedFormError::UnsupportedLine));
    }

    #[test]
    fn exhausted_inverter_dispatches_zero() {
        let s = sp(ControlMode::Vvc, 0.4, 0.2, 1.0, 0.01, 0.02, 0.0);
        let d = vvc_dispatch(&s).unwrap();
        assert_eq!(d.value, 0.0);
        let s = sp(ControlMode::Vwc, 0.4, 0.2, 1.0, 0.01, 0.02, 0.0);
        assert_eq!(vwc_dispatch(&s).unwrap().value, 0.0);
    }

    #[test]
    fn lower_limit_clamps_absorption() {
        // strong reverse reactive demand pushes the unconstrained point below -u5
        let s = sp(ControlMode::Vvc, 0.1, -0.9, 1.0, 0.01, 0.02, 0.3);
        let d = vvc_dispatch(&s).unwrap();
        assert!(d.x5_unconstrained.unwrap() < -0.3);
        assert_eq!(d.value, -0.3);
        assert_eq!(d.binding, Binding::LowerLimit);
    }

    #[test]
    fn unconstrained_volt_watt_runs_at_full_output() {
        let s = sp(ControlMode::Vwc, 0.5, 0.1, 0.95, 0.01, 0.02, 0.4);
        let d = vwc_dispatch(&s).unwrap();
        assert_eq!(d.value, 0.4);
        assert_eq!(d.binding, Binding::UpperLimit);
        assert!(d.x5_vub.unwrap() >= 0.4);
    }

    #[test]
    fn mode_mismatch_is_rejected() {
        let s = sp(ControlMode::Vwc, 0.5, 0.1, 1.0, 0.01, 0.02, 0.4);
        assert!(vvc_dispatch(&s).is_err());
    }
}
