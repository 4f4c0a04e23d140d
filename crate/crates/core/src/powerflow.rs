//! Ground-truth branch-flow solver for radial feeders.
//!
//! The state is expressed in branch-flow variables: squared bus voltage `v`,
//! sending-end flows `P`, `Q` and squared current `l` on each line, tied by
//!
//! ```text
//! P_ij - r l_ij - p_Lj + p_Dj = sum_k P_jk
//! Q_ij - x l_ij - q_Lj + q_Dj = sum_k Q_jk
//! v_j = v_i - 2 (r P_ij + x Q_ij) + (r^2 + x^2) l_ij
//! v_i l_ij = P_ij^2 + Q_ij^2
//! ```
//!
//! Solved by backward/forward sweep from a flat start.

use crate::error::PowerFlowError;
use crate::feeder::Feeder;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 100;

/// DER injections per bus index; zero at buses without a DER.
#[derive(Clone, Debug, PartialEq)]
pub struct DispatchSet {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl DispatchSet {
    pub fn zeros(n: usize) -> Self {
        DispatchSet { p: vec![0.0; n], q: vec![0.0; n] }
    }

    pub fn set(&mut self, bus: usize, p: f64, q: f64) {
        self.p[bus] = p;
        self.q[bus] = q;
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }
}

/// Physical state of the feeder for one snapshot. Bus quantities are indexed
/// by bus, line quantities by line index.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkState {
    pub v_sq: Vec<f64>,
    pub p_flow: Vec<f64>,
    pub q_flow: Vec<f64>,
    pub i_sq: Vec<f64>,
    pub iterations: usize,
}

impl NetworkState {
    /// Total resistive loss `sum r l` (pu).
    pub fn total_loss(&self, feeder: &Feeder) -> f64 {
        feeder
            .lines()
            .iter()
            .zip(&self.i_sq)
            .map(|(line, l)| line.r * l)
            .sum()
    }

    /// Active power drawn from the substation.
    pub fn substation_p(&self, feeder: &Feeder) -> f64 {
        feeder.bus(feeder.root()).children.iter().map(|&c| self.p_flow[feeder.line_into(c).unwrap()]).sum()
    }

    pub fn substation_q(&self, feeder: &Feeder) -> f64 {
        feeder.bus(feeder.root()).children.iter().map(|&c| self.q_flow[feeder.line_into(c).unwrap()]).sum()
    }
}

/// Smallest root of `z^2 l^2 + (2(r P + x Q) - v) l + (P^2 + Q^2) = 0`: the squared
/// current of a line with sending voltage `v_send` and receiving-end power `(p_recv, q_recv)`.
/// `None` when no real solution exists.
pub fn line_current_sq(v_send: f64, p_recv: f64, q_recv: f64, r: f64, x: f64) -> Option<f64> {
    let s_sq = p_recv * p_recv + q_recv * q_recv;
    let half_b = v_send - 2.0 * (r * p_recv + x * q_recv);
    let disc = half_b * half_b - 4.0 * (r * r + x * x) * s_sq;
    if !(half_b > 0.0) || disc < 0.0 {
        return None;
    }
    Some(2.0 * s_sq / (half_b + disc.sqrt()))
}

fn net_injection(feeder: &Feeder, dispatch: &DispatchSet, load_mult: f64, j: usize) -> (f64, f64) {
    let b = feeder.bus(j);
    (
        b.load_p * load_mult - dispatch.p[j],
        b.load_q * load_mult - dispatch.q[j],
    )
}

/// Solves the branch-flow equations for the given dispatch.
///
/// Iterates until the largest change in any squared bus voltage is at most
/// `tol`; exceeding `max_iter` is an error.
pub fn solve_power_flow(
    feeder: &Feeder,
    dispatch: &DispatchSet,
    v_root_sq: f64,
    load_mult: f64,
    tol: f64,
    max_iter: usize,
) -> Result<NetworkState, PowerFlowError> {
    let n = feeder.len();
    if dispatch.len() != n {
        return Err(PowerFlowError::InvalidInput(format!(
            "dispatch has {} entries, feeder has {n} buses",
            dispatch.len()
        )));
    }
    if !(tol > 0.0) || !(v_root_sq > 0.0) {
        return Err(PowerFlowError::InvalidInput("tol and v_root_sq must be positive".into()));
    }
    for j in 0..n {
        if feeder.bus(j).der.is_none() && (dispatch.p[j] != 0.0 || dispatch.q[j] != 0.0) {
            return Err(PowerFlowError::InvalidInput(format!(
                "dispatch at bus '{}' which has no DER",
                feeder.bus(j).id
            )));
        }
    }

    let m = feeder.lines().len();
    let order = feeder.order();
    let mut v = vec![v_root_sq; n];
    let mut p = vec![0.0; m];
    let mut q = vec![0.0; m];
    let mut l = vec![0.0; m];
    let mut child_p = vec![0.0; n];
    let mut child_q = vec![0.0; n];
    let mut last_change = f64::INFINITY;

    for iter in 1..=max_iter {
        child_p.iter_mut().for_each(|x| *x = 0.0);
        child_q.iter_mut().for_each(|x| *x = 0.0);
        for &j in order.iter().rev() {
            let Some(k) = feeder.line_into(j) else { continue };
            let line = feeder.line(k);
            let (np, nq) = net_injection(feeder, dispatch, load_mult, j);
            let pr = np + child_p[j];
            let qr = nq + child_q[j];
            let lk = line_current_sq(v[line.from], pr, qr, line.r, line.x).ok_or_else(|| {
                PowerFlowError::VoltageCollapse { bus: feeder.bus(j).id.clone(), iteration: iter }
            })?;
            l[k] = lk;
            p[k] = pr + line.r * lk;
            q[k] = qr + line.x * lk;
            child_p[line.from] += p[k];
            child_q[line.from] += q[k];
        }

        let mut change: f64 = 0.0;
        for &j in order {
            let Some(k) = feeder.line_into(j) else { continue };
            let line = feeder.line(k);
            let vj = v[line.from] - 2.0 * (line.r * p[k] + line.x * q[k]) + line.z_sq() * l[k];
            if !(vj > 0.0) {
                return Err(PowerFlowError::VoltageCollapse { bus: feeder.bus(j).id.clone(), iteration: iter });
            }
            change = change.max((vj - v[j]).abs());
            v[j] = vj;
        }
        last_change = change;
        if change <= tol {
            return Ok(NetworkState { v_sq: v, p_flow: p, q_flow: q, i_sq: l, iterations: iter });
        }
    }
    Err(PowerFlowError::NotConverged { iterations: max_iter, last_change })
}

/// Largest absolute residual of each branch-flow equation over the feeder.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BranchFlowResidual {
    pub active_balance: f64,
    pub reactive_balance: f64,
    pub voltage_drop: f64,
    pub current: f64,
}

impl BranchFlowResidual {
    pub fn max(&self) -> f64 {
        self.active_balance
            .max(self.reactive_balance)
            .max(self.voltage_drop)
            .max(self.current)
    }
}

pub fn branch_flow_residual(
    feeder: &Feeder,
    state: &NetworkState,
    dispatch: &DispatchSet,
    load_mult: f64,
) -> BranchFlowResidual {
    let n = feeder.len();
    let mut child_p = vec![0.0; n];
    let mut child_q = vec![0.0; n];
    for (k, line) in feeder.lines().iter().enumerate() {
        child_p[line.from] += state.p_flow[k];
        child_q[line.from] += state.q_flow[k];
    }
    let mut res = BranchFlowResidual::default();
    for (k, line) in feeder.lines().iter().enumerate() {
        let j = line.to;
        let (np, nq) = net_injection(feeder, dispatch, load_mult, j);
        let (pk, qk, lk) = (state.p_flow[k], state.q_flow[k], state.i_sq[k]);
        let ra = pk - line.r * lk - np - child_p[j];
        let rb = qk - line.x * lk - nq - child_q[j];
        let rc = state.v_sq[j] - state.v_sq[line.from] + 2.0 * (line.r * pk + line.x * qk) - line.z_sq() * lk;
        let rd = state.v_sq[line.from] * lk - pk * pk - qk * qk;
        res.active_balance = res.active_balance.max(ra.abs());
        res.reactive_balance = res.reactive_balance.max(rb.abs());
        res.voltage_drop = res.voltage_drop.max(rc.abs());
        res.current = res.current.max(rd.abs());
    }
    res
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VoltageSide {
    Under,
    Over,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VoltageViolation {
    pub bus: usize,
    pub v_sq: f64,
    pub side: VoltageSide,
    /// Distance outside the squared-voltage band (pu^2).
    pub excess_sq: f64,
    /// Same distance in voltage magnitude (pu).
    pub excess_pu: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurrentViolation {
    pub line: usize,
    pub i_sq: f64,
    pub ampacity_sq: f64,
    pub excess_sq: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ViolationReport {
    pub voltage: Vec<VoltageViolation>,
    pub current: Vec<CurrentViolation>,
}

impl ViolationReport {
    pub fn is_empty(&self) -> bool {
        self.voltage.is_empty() && self.current.is_empty()
    }

    /// Largest voltage-magnitude excursion outside the band (pu), 0 when compliant.
    pub fn max_voltage_excess_pu(&self) -> f64 {
        self.voltage.iter().map(|v| v.excess_pu).fold(0.0, f64::max)
    }
}

/// Lists buses outside `[v_min_sq, v_max_sq]` and lines above their rating.
pub fn check_operational_limits(
    feeder: &Feeder,
    state: &NetworkState,
    v_min_sq: f64,
    v_max_sq: f64,
) -> ViolationReport {
    let mut report = ViolationReport::default();
    for (j, &v) in state.v_sq.iter().enumerate() {
        if v > v_max_sq {
            report.voltage.push(VoltageViolation {
                bus: j,
                v_sq: v,
                side: VoltageSide::Over,
                excess_sq: v - v_max_sq,
                excess_pu: v.sqrt() - v_max_sq.sqrt(),
            });
        } else if v < v_min_sq {
            report.voltage.push(VoltageViolation {
                bus: j,
                v_sq: v,
                side: VoltageSide::Under,
                excess_sq: v_min_sq - v,
                excess_pu: v_min_sq.sqrt() - v.max(0.0).sqrt(),
            });
        }
    }
    for (k, line) in feeder.lines().iter().enumerate() {
        let l = state.i_sq[k];
        if l > line.ampacity_sq {
            report.current.push(CurrentViolation {
                line: k,
                i_sq: l,
                ampacity_sq: line.ampacity_sq,
                excess_sq: l - line.ampacity_sq,
            });
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feeder::{Bus, Line};

    fn chain(loads: &[(f64, f64)], r: f64, x: f64) -> Feeder {
        let mut buses = vec![Bus {
            id: "0".into(),
            parent: None,
            children: vec![],
            load_p: 0.0,
            load_q: 0.0,
            der: None,
        }];
        let mut lines = Vec::new();
        for (i, &(p, q)) in loads.iter().enumerate() {
            buses.push(Bus {
                id: (i + 1).to_string(),
                parent: Some(i),
                children: vec![],
                load_p: p,
                load_q: q,
                der: None,
            });
            lines.push(Line { from: i, to: i + 1, r, x, ampacity_sq: 1.0 });
        }
        Feeder::new(1.0, 1.0, buses, lines).unwrap()
    }

    #[test]
    fn no_load_is_flat() {
        let f = chain(&[(0.0, 0.0)], 0.01, 0.01);
        let s = solve_power_flow(&f, &DispatchSet::zeros(2), 1.02, 1.0, 1e-10, 100).unwrap();
        assert_eq!(s.v_sq, vec![1.02, 1.02]);
        assert_eq!(s.p_flow, vec![0.0]);
        assert_eq!(s.i_sq, vec![0.0]);
    }

    #[test]
    fn perturbed_voltage_shows_in_drop_residual() {
        let f = chain(&[(0.1, 0.05), (0.2, 0.1)], 0.01, 0.02);
        let d = DispatchSet::zeros(3);
        let mut s = solve_power_flow(&f, &d, 1.0, 1.0, 1e-10, 100).unwrap();
        assert!(branch_flow_residual(&f, &s, &d, 1.0).max() <= 1e-10);
        s.v_sq[1] += 0.01;
        let r = branch_flow_residual(&f, &s, &d, 1.0);
        assert!(r.voltage_drop >= 0.005, "{r:?}");
    }

    #[test]
    fn zero_state_balance_residual_is_heaviest_load() {
        let f = chain(&[(0.1, 0.05), (0.3, 0.1), (0.2, 0.0)], 0.01, 0.02);
        let zero = NetworkState {
            v_sq: vec![0.0; 4],
            p_flow: vec![0.0; 3],
            q_flow: vec![0.0; 3],
            i_sq: vec![0.0; 3],
            iterations: 0,
        };
        let r = branch_flow_residual(&f, &zero, &DispatchSet::zeros(4), 1.0);
        assert_eq!(r.active_balance, 0.3);
        assert_eq!(r.reactive_balance, 0.1);
    }

    #[test]
    fn limits_report() {
        let f = chain(&[(0.0, 0.0), (0.0, 0.0)], 0.01, 0.01);
        let mut s = solve_power_flow(&f, &DispatchSet::zeros(3), 1.0, 1.0, 1e-10, 100).unwrap();
        let (lo, hi) = (0.95f64.powi(2), 1.05f64.powi(2));
        assert!(check_operational_limits(&f, &s, lo, hi).is_empty());
        s.v_sq[2] = 1.06f64.powi(2);
        s.i_sq[0] = 1.5;
        let rep = check_operational_limits(&f, &s, lo, hi);
        assert_eq!(rep.voltage.len(), 1);
        assert_eq!(rep.voltage[0].bus, 2);
        assert!((rep.voltage[0].excess_sq - (1.06f64.powi(2) - hi)).abs() < 1e-15);
        assert!((rep.voltage[0].excess_pu - 0.01).abs() < 1e-12);
        assert_eq!(rep.current.len(), 1);
        assert!((rep.current[0].excess_sq - 0.5).abs() < 1e-15);
    }

    #[test]
    fn divergence_is_an_error() {
        let f = chain(&[(30.0, 30.0)], 0.05, 0.05);
        let err = solve_power_flow(&f, &DispatchSet::zeros(2), 1.0, 1.0, 1e-10, 100).unwrap_err();
        assert!(matches!(err, PowerFlowError::VoltageCollapse { .. }), "{err:?}");
        let f = chain(&[(0.1, 0.1); 5], 0.05, 0.05);
        let err = solve_power_flow(&f, &DispatchSet::zeros(6), 1.0, 1.0, 1e-10, 1).unwrap_err();
        assert!(matches!(err, PowerFlowError::NotConverged { iterations: 1, .. }));
    }

    #[test]
    fn dispatch_at_non_der_bus_is_rejected() {
        let f = chain(&[(0.1, 0.0)], 0.01, 0.01);
        let mut d = DispatchSet::zeros(2);
        d.set(1, 0.1, 0.0);
        assert!(matches!(
            solve_power_flow(&f, &d, 1.0, 1.0, 1e-10, 100),
            Err(PowerFlowError::InvalidInput(_))
        ));
    }
}
