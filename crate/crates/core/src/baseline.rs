//! Centralized reference dispatch.
//!
//! Both methods search the DER setpoints directly against the full power-flow
//! solve, so they share nothing with the closed-form node solutions. Voltage
//! limits are enforced strictly; ampacity is reported, not enforced.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::agents::ObjectiveKind;
use crate::error::BaselineError;
use crate::feeder::{ControlMode, DerSpec, Feeder};
use crate::powerflow::{solve_power_flow, DispatchSet, NetworkState, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::scenario::StepInputs;

pub const MAX_GRID_DERS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CopfObjective {
    MinLoss,
    MaxGeneration,
}

impl CopfObjective {
    pub fn for_mode(mode: ControlMode) -> Self {
        match mode {
            ControlMode::Vvc => CopfObjective::MinLoss,
            ControlMode::Vwc => CopfObjective::MaxGeneration,
        }
    }

    pub fn kind(self) -> ObjectiveKind {
        match self {
            CopfObjective::MinLoss => ObjectiveKind::Loss,
            CopfObjective::MaxGeneration => ObjectiveKind::Generation,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CopfMethod {
    GridSearch,
    CoordinateDescent,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CentralizedResult {
    pub dispatch: DispatchSet,
    pub state: NetworkState,
    /// Loss (pu) or total DER output (pu), per the objective.
    pub objective: f64,
    pub method: CopfMethod,
    /// DER setpoints in bus-index order (`q_D` or `p_D`).
    pub setpoints: Vec<f64>,
    pub converged: bool,
    pub evaluations: usize,
}

/// The network-level problem over the DER setpoints.
struct Problem<'a> {
    feeder: &'a Feeder,
    inputs: StepInputs,
    mode: ControlMode,
    objective: CopfObjective,
    ders: Vec<(usize, DerSpec)>,
    bounds: Vec<(f64, f64)>,
}

/// Power-flow result of one candidate: voltage-band violation and the score to minimize.
#[derive(Clone, Copy, Debug)]
struct Score {
    violation: f64,
    value: f64,
}

impl Score {
    const WORST: Score = Score { violation: f64::INFINITY, value: f64::INFINITY };

    fn feasible(&self) -> bool {
        self.violation == 0.0
    }

    fn cmp(&self, other: &Score) -> Ordering {
        self.violation
            .total_cmp(&other.violation)
            .then(self.value.total_cmp(&other.value))
    }
}

impl<'a> Problem<'a> {
    fn new(feeder: &'a Feeder, inputs: StepInputs, objective: CopfObjective) -> Result<Self, BaselineError> {
        let ders: Vec<(usize, DerSpec)> = feeder
            .der_buses()
            .into_iter()
            .map(|j| (j, feeder.bus(j).der.expect("DER bus")))
            .collect();
        let mode = match ders.first() {
            None => match objective {
                CopfObjective::MinLoss => ControlMode::Vvc,
                CopfObjective::MaxGeneration => ControlMode::Vwc,
            },
            Some((_, d)) => d.mode,
        };
        if ders.iter().any(|(_, d)| d.mode != mode) {
            return Err(BaselineError::MixedModes);
        }
        let bounds = ders
            .iter()
            .map(|(j, d)| {
                let p = d.available_p(inputs.pv_mult);
                match mode {
                    ControlMode::Vvc => {
                        if p > d.rating_s {
                            return Err(crate::error::ClosedFormError::CapabilityEmpty {
                                bus: feeder.bus(*j).id.clone(),
                                p_avail: p,
                                rating: d.rating_s,
                            });
                        }
                        let q = (d.rating_s * d.rating_s - p * p).sqrt();
                        Ok((-q, q))
                    }
                    ControlMode::Vwc => Ok((0.0, d.rating_s.min(p).max(0.0))),
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Problem { feeder, inputs, mode, objective, ders, bounds })
    }

    fn dispatch(&self, x: &[f64]) -> DispatchSet {
        let mut d = DispatchSet::zeros(self.feeder.len());
        for ((j, der), &v) in self.ders.iter().zip(x) {
            match self.mode {
                ControlMode::Vvc => d.set(*j, der.available_p(self.inputs.pv_mult), v),
                ControlMode::Vwc => d.set(*j, v, 0.0),
            }
        }
        d
    }

    fn solve(&self, x: &[f64]) -> Option<NetworkState> {
        solve_power_flow(
            self.feeder,
            &self.dispatch(x),
            self.inputs.v_root_sq,
            self.inputs.load_mult,
            DEFAULT_TOL,
            DEFAULT_MAX_ITER,
        )
        .ok()
    }

    fn score(&self, x: &[f64]) -> Score {
        let Some(state) = self.solve(x) else { return Score::WORST };
        let (lo, hi) = (self.inputs.v_min_sq, self.inputs.v_max_sq);
        let violation = state
            .v_sq
            .iter()
            .map(|&v| (v - hi).max(lo - v).max(0.0))
            .fold(0.0, f64::max);
        let value = match self.objective {
            CopfObjective::MinLoss => state.total_loss(self.feeder),
            CopfObjective::MaxGeneration => -self.dispatch(x).p.iter().sum::<f64>(),
        };
        Score { violation, value }
    }

    fn finish(&self, x: Vec<f64>, method: CopfMethod, converged: bool, evaluations: usize) -> Result<CentralizedResult, BaselineError> {
        let dispatch = self.dispatch(&x);
        let state = solve_power_flow(
            self.feeder,
            &dispatch,
            self.inputs.v_root_sq,
            self.inputs.load_mult,
            DEFAULT_TOL,
            DEFAULT_MAX_ITER,
        )?;
        let objective = match self.objective {
            CopfObjective::MinLoss => state.total_loss(self.feeder),
            CopfObjective::MaxGeneration => dispatch.p.iter().sum(),
        };
        Ok(CentralizedResult { dispatch, state, objective, method, setpoints: x, converged, evaluations })
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Best feasible point of a tensor grid, ties to the lexicographically smallest setpoints.
fn best_on_grid(problem: &Problem<'_>, axes: &[Vec<f64>]) -> Option<(Score, Vec<f64>)> {
    let total: usize = axes.iter().map(Vec::len).product();
    (0..total)
        .into_par_iter()
        .map(|mut idx| {
            let mut x = Vec::with_capacity(axes.len());
            for axis in axes.iter().rev() {
                x.push(axis[idx % axis.len()]);
                idx /= axis.len();
            }
            x.reverse();
            (problem.score(&x), x)
        })
        .filter(|(s, _)| s.feasible())
        .min_by(|(sa, xa), (sb, xb)| sa.cmp(sb).then_with(|| lex_cmp(xa, xb)))
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 || hi <= lo {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Exhaustive search over a `grid_points^|DERs|` grid with one 10x local refinement.
pub fn copf_grid_search(
    feeder: &Feeder,
    inputs: StepInputs,
    objective: CopfObjective,
    grid_points: usize,
) -> Result<CentralizedResult, BaselineError> {
    let problem = Problem::new(feeder, inputs, objective)?;
    let d = problem.ders.len();
    if d > MAX_GRID_DERS {
        return Err(BaselineError::TooManyDers { max: MAX_GRID_DERS, found: d });
    }
    let grid_points = grid_points.max(2);
    let axes: Vec<Vec<f64>> = problem.bounds.iter().map(|&(lo, hi)| linspace(lo, hi, grid_points)).collect();
    let mut evaluations = axes.iter().map(Vec::len).product::<usize>();
    let (coarse_score, coarse_x) = best_on_grid(&problem, &axes).ok_or(BaselineError::Infeasible)?;

    let fine_axes: Vec<Vec<f64>> = problem
        .bounds
        .iter()
        .zip(&coarse_x)
        .map(|(&(lo, hi), &c)| {
            let cell = (hi - lo) / (grid_points - 1) as f64;
            if cell <= 0.0 {
                return vec![c];
            }
            let step = cell / 10.0;
            (-10..=10)
                .map(|k| c + k as f64 * step)
                .filter(|v| *v >= lo && *v <= hi)
                .collect()
        })
        .collect();
    evaluations += fine_axes.iter().map(Vec::len).product::<usize>();
    let best = match best_on_grid(&problem, &fine_axes) {
        Some((s, x)) if s.cmp(&coarse_score).is_le() => x,
        _ => coarse_x,
    };
    problem.finish(best, CopfMethod::GridSearch, true, evaluations)
}

const GOLDEN: f64 = 0.618_033_988_749_894_8;
const LINE_SCAN: usize = 41;

/// Golden-section minimization of a unimodal 1-D function on `[a, b]`.
fn golden_section(mut a: f64, mut b: f64, f: impl Fn(f64) -> Score, evals: &mut usize) -> (f64, Score) {
    let mut c = b - GOLDEN * (b - a);
    let mut d = a + GOLDEN * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    *evals += 2;
    for _ in 0..100 {
        if (b - a).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        if fc.cmp(&fd).is_le() {
            b = d;
            d = c;
            fd = fc;
            c = b - GOLDEN * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + GOLDEN * (b - a);
            fd = f(d);
        }
        *evals += 1;
    }
    if fc.cmp(&fd).is_le() {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Step range `[s_lo, s_hi]` keeping `x + s d` inside the box.
fn step_range(problem: &Problem<'_>, x: &[f64], dir: &[f64]) -> (f64, f64) {
    let (mut s_lo, mut s_hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for ((&xi, &di), &(lo, hi)) in x.iter().zip(dir).zip(&problem.bounds) {
        if di > 0.0 {
            s_lo = s_lo.max((lo - xi) / di);
            s_hi = s_hi.min((hi - xi) / di);
        } else if di < 0.0 {
            s_lo = s_lo.max((hi - xi) / di);
            s_hi = s_hi.min((lo - xi) / di);
        }
    }
    (s_lo.min(0.0), s_hi.max(0.0))
}

/// Best step along `dir` from `x`: coarse scan, then feasibility-boundary
/// bisection and golden-section refinement around local minima. Returns the
/// step and its score; step 0 (no move) wins ties.
fn line_search(problem: &Problem<'_>, x: &[f64], dir: &[f64], evals: &mut usize) -> (f64, Score) {
    let (lo, hi) = step_range(problem, x, dir);
    let eval = |s: f64| {
        let y: Vec<f64> = x
            .iter()
            .zip(dir)
            .zip(&problem.bounds)
            .map(|((&xi, &di), &(l, h))| (xi + s * di).clamp(l, h))
            .collect();
        problem.score(&y)
    };
    let mut best = (0.0, eval(0.0));
    *evals += 1;
    if hi <= lo {
        return best;
    }
    let grid = linspace(lo, hi, LINE_SCAN);
    let scores: Vec<Score> = grid.iter().map(|&s| eval(s)).collect();
    *evals += grid.len();

    let mut offer = |s: f64, sc: Score| {
        if sc.cmp(&best.1).is_lt() {
            best = (s, sc);
        }
    };
    for (&s, &sc) in grid.iter().zip(&scores) {
        offer(s, sc);
    }
    for i in 0..grid.len().saturating_sub(1) {
        let (a, b) = (scores[i].feasible(), scores[i + 1].feasible());
        if a != b {
            let (mut feas, mut infeas) = if a { (grid[i], grid[i + 1]) } else { (grid[i + 1], grid[i]) };
            for _ in 0..60 {
                let mid = 0.5 * (feas + infeas);
                *evals += 1;
                if eval(mid).feasible() {
                    feas = mid;
                } else {
                    infeas = mid;
                }
            }
            let sc = eval(feas);
            *evals += 1;
            offer(feas, sc);
        }
    }
    for i in 0..grid.len() {
        let left = if i > 0 { scores[i - 1] } else { Score::WORST };
        let right = if i + 1 < grid.len() { scores[i + 1] } else { Score::WORST };
        if !scores[i].feasible() || scores[i].cmp(&left).is_gt() || scores[i].cmp(&right).is_gt() {
            continue;
        }
        let a = if i > 0 { grid[i - 1] } else { grid[i] };
        let b = if i + 1 < grid.len() { grid[i + 1] } else { grid[i] };
        if b > a {
            let (s, sc) = golden_section(a, b, eval, evals);
            offer(s, sc);
        }
    }
    best
}

/// Exchange ratios for the pairwise directions `e_i - t e_j`.
const TRADE_RATIOS: [f64; 11] = [0.1, 0.25, 0.5, 0.75, 0.9, 1.0, 1.1, 1.5, 2.0, 4.0, 10.0];

/// One pass of line searches over `dirs`, moving to every strict improvement.
fn sweep(problem: &Problem<'_>, x: &mut [f64], current: &mut Score, dirs: &[Vec<f64>], evals: &mut usize) {
    for dir in dirs {
        let (s, sc) = line_search(problem, x, dir, evals);
        if s != 0.0 && sc.cmp(current).is_lt() {
            for ((xi, &di), &(lo, hi)) in x.iter_mut().zip(dir).zip(&problem.bounds) {
                *xi = (*xi + s * di).clamp(lo, hi);
            }
            *current = sc;
        }
    }
}

/// Best of the zero setpoint and a scan along the box diagonal. Sweeping one
/// coordinate at a time from a corner can stall where coupled voltage limits
/// block every single-axis move.
fn diagonal_start(problem: &Problem<'_>) -> (Vec<f64>, Score, usize) {
    let zero: Vec<f64> = problem.bounds.iter().map(|&(lo, hi)| 0.0f64.clamp(lo, hi)).collect();
    let mut best = (problem.score(&zero), zero);
    let mut evals = 1;
    if problem.bounds.len() > 1 {
        for lambda in linspace(0.0, 1.0, LINE_SCAN) {
            let y: Vec<f64> = problem.bounds.iter().map(|&(lo, hi)| lo + lambda * (hi - lo)).collect();
            let sc = problem.score(&y);
            evals += 1;
            if sc.cmp(&best.0).is_lt() {
                best = (sc, y);
            }
        }
    }
    (best.1, best.0, evals)
}

/// Cyclic coordinate descent with a 1-D line search per DER, until a sweep
/// improves the objective by less than `tol`. When a coordinate sweep stalls,
/// pairwise exchange directions are tried before stopping, so setpoints can
/// slide along a voltage limit shared by several DERs.
pub fn copf_coordinate_descent(
    feeder: &Feeder,
    inputs: StepInputs,
    objective: CopfObjective,
    tol: f64,
    max_sweeps: usize,
) -> Result<CentralizedResult, BaselineError> {
    let problem = Problem::new(feeder, inputs, objective)?;
    let d = problem.ders.len();
    let axes: Vec<Vec<f64>> = (0..d).map(|j| (0..d).map(|i| f64::from(u8::from(i == j))).collect()).collect();
    let mut trades = Vec::new();
    for i in 0..d {
        for j in (0..d).filter(|&j| j != i) {
            for t in TRADE_RATIOS {
                let mut dir = vec![0.0; d];
                dir[i] = 1.0;
                dir[j] = -t;
                trades.push(dir);
            }
        }
    }
    let (mut x, mut current, mut evals) = diagonal_start(&problem);
    let mut converged = d == 0;
    let improved = |before: Score, after: Score| before.violation > after.violation || before.value - after.value >= tol;
    for _ in 0..max_sweeps {
        if d == 0 {
            break;
        }
        let before = current;
        sweep(&problem, &mut x, &mut current, &axes, &mut evals);
        if current.feasible() && !improved(before, current) {
            sweep(&problem, &mut x, &mut current, &trades, &mut evals);
            if !improved(before, current) {
                converged = true;
                break;
            }
        }
    }
    if !current.feasible() {
        return Err(BaselineError::Infeasible);
    }
    problem.finish(x, CopfMethod::CoordinateDescent, converged, evals)
}

/// Grid search when tractable, coordinate descent otherwise.
pub fn copf_auto(
    feeder: &Feeder,
    inputs: StepInputs,
    objective: CopfObjective,
    grid_points: usize,
) -> Result<CentralizedResult, BaselineError> {
    if feeder.der_buses().len() <= MAX_GRID_DERS {
        copf_grid_search(feeder, inputs, objective, grid_points)
    } else {
        copf_coordinate_descent(feeder, inputs, objective, 1e-10, 200)
    }
}

/// Per-dimension grid size that keeps the full grid near two thousand to a
/// few hundred thousand evaluations.
pub fn default_grid_points(ders: usize) -> usize {
    match ders {
        0 | 1 => 2001,
        2 => 201,
        _ => 41,
    }
}
