use crate::feeder::ControlMode;

use super::NodeSubproblem;

/// General-form conic `A x4^2 + B x4 x5 + C x5^2 + D x4 + E x5 + F = 0` of the
/// reduced solution space, with its orientation and center.
///
/// Volt-Var: `A = z^2, B = -2 z2, C = 1, D = 2 P z1 + 2 Q z2 - V, E = -2 Q, F = P^2 + Q^2`.
/// Volt-Watt swaps the roles of the two impedance components and of `P` and `Q`
/// in the cross and linear terms: `B = -2 z1`, `E = -2 P`.
///
/// The orientation is the standard rotation `theta = atan2(B, A - C) / 2`. An
/// alternative printed form, `atan(-(1 - z^2 - sqrt((z^2 - 1) + 4 z2^2)) / (2 z2))`,
/// does not agree with it and is not used.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConicDescriptor {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
    pub theta: f64,
    /// `None` when `B^2 - 4AC = 0` (parabola): the line has no resistance
    /// (Volt-Var) or no reactance (Volt-Watt).
    pub center: Option<(f64, f64)>,
}

impl ConicDescriptor {
    pub fn discriminant(&self) -> f64 {
        self.b * self.b - 4.0 * self.a * self.c
    }

    pub fn is_degenerate(&self) -> bool {
        self.center.is_none()
    }

    pub fn eval(&self, x4: f64, x5: f64) -> f64 {
        self.a * x4 * x4 + self.b * x4 * x5 + self.c * x5 * x5 + self.d * x4 + self.e * x5 + self.f
    }

    pub fn gradient(&self, x4: f64, x5: f64) -> (f64, f64) {
        (
            2.0 * self.a * x4 + self.b * x5 + self.d,
            self.b * x4 + 2.0 * self.c * x5 + self.e,
        )
    }
}

pub fn conic_descriptor(sp: &NodeSubproblem) -> ConicDescriptor {
    let (p, q, v) = (sp.big_p, sp.big_q, sp.v_up);
    let (b, e) = match sp.mode {
        ControlMode::Vvc => (-2.0 * sp.z2, -2.0 * q),
        ControlMode::Vwc => (-2.0 * sp.z1, -2.0 * p),
    };
    let (a, c) = (sp.z_sq(), 1.0);
    let d = 2.0 * p * sp.z1 + 2.0 * q * sp.z2 - v;
    let f = p * p + q * q;
    let disc = b * b - 4.0 * a * c;
    let center = (disc != 0.0).then(|| ((2.0 * c * d - b * e) / disc, (2.0 * a * e - b * d) / disc));
    ConicDescriptor {
        a,
        b,
        c,
        d,
        e,
        f,
        theta: 0.5 * b.atan2(a - c),
        center,
    }
}
