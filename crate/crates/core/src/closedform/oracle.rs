//! Numeric reference solver for the reduced node problem.
//!
//! Scans `x5` over `[l5, u5]`, reconstructs the exact `x4` on the solution
//! ellipse for each sample, checks the voltage and current boxes, then refines
//! the incumbent by bisection: on the feasibility boundary, or on the sign of
//! a central-difference slope for interior minima. Shares no formulas with
//! the closed-form path beyond the problem statement itself.

use crate::error::ClosedFormError;

use super::{NodeSubproblem, X_DER, X_L, X_P, X_Q, X_V};

pub const ORACLE_SCAN_POINTS: usize = 4001;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OracleObjective {
    /// Minimize line current (loss).
    MinX4,
    /// Maximize the DER decision (minimize curtailment).
    MaxX5,
}

/// What limits the oracle optimum.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OracleBinding {
    Interior,
    DerLower,
    DerUpper,
    VoltageUpper,
    VoltageLower,
    Current,
    /// Real-solution boundary of the ellipse itself.
    Ellipse,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleSolution {
    pub x5: f64,
    pub x4: f64,
    pub x3: f64,
    pub binding: OracleBinding,
}

#[derive(Clone, Copy, Debug)]
struct Eval {
    x4: f64,
    x3: f64,
    violated: Option<OracleBinding>,
}

/// Smaller `x4` solving `(pr + z1 x4)^2 + (qr + z2 x4)^2 = V x4`.
fn exact_x4(sp: &NodeSubproblem, x5: f64) -> Option<f64> {
    let (pr, qr) = sp.receiving_power(x5);
    let a = sp.z1 * sp.z1 + sp.z2 * sp.z2;
    let b = 2.0 * (pr * sp.z1 + qr * sp.z2) - sp.v_up;
    let c = pr * pr + qr * qr;
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 || b >= 0.0 {
        return None;
    }
    // smaller root (-b - sqrt(disc)) / 2a written as 2c / (-b + sqrt(disc))
    Some(2.0 * c / (-b + disc.sqrt()))
}

fn evaluate(sp: &NodeSubproblem, x5: f64) -> Eval {
    let Some(x4) = exact_x4(sp, x5) else {
        return Eval { x4: f64::NAN, x3: f64::NAN, violated: Some(OracleBinding::Ellipse) };
    };
    let (pr, qr) = sp.receiving_power(x5);
    let x1 = pr + sp.z1 * x4;
    let x2 = qr + sp.z2 * x4;
    let x3 = sp.v_up - 2.0 * (sp.z1 * x1 + sp.z2 * x2) + (sp.z1 * sp.z1 + sp.z2 * sp.z2) * x4;
    let violated = if x3 > sp.upper[X_V] {
        Some(OracleBinding::VoltageUpper)
    } else if x3 < sp.lower[X_V] {
        Some(OracleBinding::VoltageLower)
    } else if x4 > sp.upper[X_L]
        || x4 < sp.lower[X_L]
        || x1 > sp.upper[X_P] || x1 < sp.lower[X_P] || x2 > sp.upper[X_Q] || x2 < sp.lower[X_Q] {
        Some(OracleBinding::Current)
    } else {
        None
    };
    Eval { x4, x3, violated }
}

fn score(objective: OracleObjective, x5: f64, e: &Eval) -> f64 {
    match objective {
        OracleObjective::MinX4 => e.x4,
        OracleObjective::MaxX5 => -x5,
    }
}

/// Bisects between a feasible and an infeasible `x5`; returns the feasible end
/// and the constraint violated just beyond it.
fn bisect_boundary(sp: &NodeSubproblem, mut feas: f64, mut infeas: f64) -> (f64, OracleBinding) {
    let mut why = evaluate(sp, infeas).violated.unwrap_or(OracleBinding::Interior);
    for _ in 0..200 {
        let mid = 0.5 * (feas + infeas);
        if mid == feas || mid == infeas {
            break;
        }
        match evaluate(sp, mid).violated {
            None => feas = mid,
            Some(v) => {
                infeas = mid;
                why = v;
            }
        }
    }
    (feas, why)
}

fn slope(sp: &NodeSubproblem, x5: f64, h: f64) -> Option<f64> {
    let lo = exact_x4(sp, x5 - h)?;
    let hi = exact_x4(sp, x5 + h)?;
    Some(hi - lo)
}

/// Bisects on the sign of `d x4 / d x5` between `lo` (slope < 0) and `hi` (slope > 0).
fn bisect_stationary(sp: &NodeSubproblem, mut lo: f64, mut hi: f64) -> Option<f64> {
    let h = 1e-6 * (1.0 + hi.abs().max(lo.abs()));
    if !(slope(sp, lo, h)? < 0.0 && slope(sp, hi, h)? > 0.0) {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if slope(sp, mid, h)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Solves the reduced node problem numerically over `x5 in [l5, u5]`.
pub fn node_numeric_oracle(
    sp: &NodeSubproblem,
    objective: OracleObjective,
) -> Result<OracleSolution, ClosedFormError> {
    sp.check()?;
    let (l5, u5) = (sp.lower[X_DER], sp.upper[X_DER]);
    if !(l5.is_finite() && u5.is_finite()) {
        return Err(ClosedFormError::InvalidSubproblem("oracle needs finite DER limits".into()));
    }

    let n = if u5 > l5 { ORACLE_SCAN_POINTS } else { 1 };
    let grid: Vec<f64> = (0..n)
        .map(|i| if n == 1 { l5 } else { l5 + (u5 - l5) * i as f64 / (n - 1) as f64 })
        .collect();
    let evals: Vec<Eval> = grid.iter().map(|&x| evaluate(sp, x)).collect();

    let mut best: Option<(f64, OracleSolution)> = None;
    let mut offer = |x5: f64, binding: OracleBinding| {
        let e = evaluate(sp, x5);
        if e.violated.is_some() {
            return;
        }
        let s = score(objective, x5, &e);
        let better = match &best {
            None => true,
            Some((bs, bsol)) => s < *bs || (s == *bs && x5 < bsol.x5),
        };
        if better {
            best = Some((s, OracleSolution { x5, x4: e.x4, x3: e.x3, binding }));
        }
    };

    for (i, (&x5, e)) in grid.iter().zip(&evals).enumerate() {
        if e.violated.is_some() {
            continue;
        }
        let binding = if i == 0 && x5 == l5 {
            OracleBinding::DerLower
        } else if i == n - 1 {
            OracleBinding::DerUpper
        } else {
            OracleBinding::Interior
        };
        offer(x5, binding);
    }
    if n == 1 {
        return best.map(|(_, s)| s).ok_or(ClosedFormError::Infeasible);
    }

    for i in 0..n - 1 {
        match (evals[i].violated, evals[i + 1].violated) {
            (None, Some(_)) => {
                let (x, why) = bisect_boundary(sp, grid[i], grid[i + 1]);
                offer(x, why);
            }
            (Some(_), None) => {
                let (x, why) = bisect_boundary(sp, grid[i + 1], grid[i]);
                offer(x, why);
            }
            _ => {}
        }
    }

    if objective == OracleObjective::MinX4 {
        for i in 1..n - 1 {
            let (a, b, c) = (&evals[i - 1], &evals[i], &evals[i + 1]);
            if a.violated.is_none() && b.violated.is_none() && c.violated.is_none() && b.x4 <= a.x4 && b.x4 <= c.x4 {
                if let Some(x) = bisect_stationary(sp, grid[i - 1], grid[i + 1]) {
                    offer(x, OracleBinding::Interior);
                }
            }
        }
    }

    best.map(|(_, s)| s).ok_or(ClosedFormError::Infeasible)
}
