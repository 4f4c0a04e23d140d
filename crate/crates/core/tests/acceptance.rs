//! One PASS/FAIL line per acceptance criterion. Exits non-zero if any fails.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use endico::agents::{fpi_smooth, run_simulation_with, SimulationOptions};
use endico::feeder::ControlMode;
use endico::report::{build_report, ReportOptions, RunReport};
use endico::scenario::{load_scenario, Scenario};
use endico::validate;
use endico::SimulationTrace;

const SEED: u64 = 42;
const SAMPLES: usize = 1000;

const AGREEMENT_TOL: f64 = 1e-6;
const AGREEMENT_BUDGET_S: f64 = 10.0;
const RESIDUAL_TOL: f64 = 1e-10;
const VVC_MAX_STEPS: usize = 2;
const VWC_MAX_STEPS: usize = 5;
const TRACKING_TOL_PCT: f64 = 2.0;
const VIOLATION_TOL_PU: f64 = 0.005;
const OSCILLATION_TOL_PU: f64 = 0.005;
const MIN_SPEEDUP: f64 = 10.0;
const ON_ELLIPSE_TOL: f64 = 1e-9;

struct Run {
    name: &'static str,
    scenario: Scenario,
    trace: SimulationTrace,
    report: RunReport,
}

fn run(name: &'static str) -> Run {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name);
    let scenario = load_scenario(path).expect("shipped scenario loads");
    let trace = run_simulation_with(&scenario, SimulationOptions { timing: true }).expect("simulation runs");
    let report = build_report(&scenario, &trace, ReportOptions { baseline: true, grid_points: None });
    Run { name, scenario, trace, report }
}

struct Criterion {
    id: usize,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn criterion(id: usize, title: &'static str, pass: bool, detail: String) -> Criterion {
    Criterion { id, title, pass, detail }
}

fn c1_oracle_agreement() -> Criterion {
    let t = Instant::now();
    let outcomes = [
        validate::oracle_agreement(SEED, SAMPLES, ControlMode::Vvc),
        validate::oracle_agreement(SEED, SAMPLES, ControlMode::Vwc),
        validate::projection_agreement(SEED, SAMPLES, ControlMode::Vvc),
        validate::projection_agreement(SEED, SAMPLES, ControlMode::Vwc),
    ];
    let secs = t.elapsed().as_secs_f64();
    let max_gap = outcomes.iter().map(|(o, _)| o.max_error).fold(0.0, f64::max);
    let compared: usize = outcomes.iter().map(|(_, c)| c.compared).sum();
    let on_bound: usize = outcomes.iter().map(|(_, c)| c.compared_on_bound).sum();
    let pass = outcomes.iter().all(|(o, _)| o.passed())
        && max_gap <= AGREEMENT_TOL
        && secs < AGREEMENT_BUDGET_S
        && on_bound > 0;
    criterion(
        1,
        "closed form matches numeric oracle",
        pass,
        format!(
            "{compared} compared ({on_bound} on the voltage bound) of {} drawn, max gap {max_gap:.2e} (tol {AGREEMENT_TOL:.0e}), {secs:.2} s (budget {AGREEMENT_BUDGET_S} s)",
            4 * SAMPLES
        ),
    )
}

fn c2_power_flow(runs: &[Run]) -> Criterion {
    let random = validate::power_flow_exactness(SEED, SAMPLES);
    let traced = runs
        .iter()
        .flat_map(|r| r.trace.steps.iter().map(|s| s.residual.max()))
        .fold(0.0, f64::max);
    let pass = random.passed() && random.max_error <= RESIDUAL_TOL && traced <= RESIDUAL_TOL;
    criterion(
        2,
        "power-flow residual",
        pass,
        format!(
            "random feeders max {:.2e} over {}, scenario steps max {traced:.2e} (tol {RESIDUAL_TOL:.0e})",
            random.max_error, random.checked
        ),
    )
}

fn c3_convergence(runs: &[Run]) -> Criterion {
    let mut pass = true;
    let mut parts = Vec::new();
    for r in runs {
        let limit = match r.scenario.uniform_mode() {
            Some(ControlMode::Vwc) => VWC_MAX_STEPS,
            _ => VVC_MAX_STEPS,
        };
        let steps = r.report.max_steps_to_converge();
        pass &= steps.is_some_and(|s| s <= limit);
        parts.push(format!("{} {} (max {limit})", r.name, steps.map_or("unsettled".into(), |s| s.to_string())));
    }
    criterion(3, "steps to converge", pass, parts.join(", "))
}

fn c4_tracking(runs: &[Run]) -> Criterion {
    let mut pass = true;
    let mut parts = Vec::new();
    for r in runs {
        let e = r.report.max_tracking_error_pct();
        pass &= e.is_some_and(|e| e <= TRACKING_TOL_PCT);
        parts.push(format!("{} {}", r.name, e.map_or("no baseline".into(), |e| format!("{e:.3}%"))));
    }
    criterion(4, "tracking error vs centralized optimum", pass, format!("{} (tol {TRACKING_TOL_PCT}%)", parts.join(", ")))
}

fn c5_violations(runs: &[Run]) -> Criterion {
    let mut pass = true;
    let mut parts = Vec::new();
    for r in runs {
        let v = r.report.max_v_violation_pu();
        let vvc = r.scenario.uniform_mode() == Some(ControlMode::Vvc);
        pass &= v <= VIOLATION_TOL_PU && (!vvc || v == 0.0);
        parts.push(format!("{} {v:.2e}", r.name));
    }
    criterion(5, "voltage violations at converged states", pass, format!("{} pu (tol {VIOLATION_TOL_PU}, VVC zero)", parts.join(", ")))
}

fn c6_oscillation(runs: &[Run]) -> Criterion {
    let worst = runs.iter().map(|r| (r.name, r.report.max_osc_pu())).fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
    criterion(
        6,
        "voltage oscillation",
        worst.1 <= OSCILLATION_TOL_PU,
        format!("max {:.2e} pu at {} (tol {OSCILLATION_TOL_PU})", worst.1, if worst.0.is_empty() { "-" } else { worst.0 }),
    )
}

fn c7_speedup(runs: &[Run]) -> Criterion {
    let mut pass = true;
    let mut parts = Vec::new();
    for r in runs {
        match r.report.timing {
            Some(t) => {
                pass &= t.speedup() >= MIN_SPEEDUP;
                parts.push(format!("{} {:.0}x", r.name, t.speedup()));
            }
            None => {
                pass = false;
                parts.push(format!("{} no samples", r.name));
            }
        }
    }
    criterion(7, "closed form faster than numeric oracle", pass, format!("median ratio {} (min {MIN_SPEEDUP}x)", parts.join(", ")))
}

fn c8_fpi() -> Criterion {
    let identity = [(0.3, 0.9), (-1.0, 2.5), (1.05, 1.0)].iter().all(|&(c, p)| fpi_smooth(c, p, 0.0) == c);
    let eleventh = (fpi_smooth(1.0, 0.0, 10.0) - 1.0 / 11.0).abs();
    let (cur, prev) = (1.3, 0.4);
    let limit = (fpi_smooth(cur, prev, 1e9) - prev).abs() / (cur - prev).abs();
    let pass = identity && eleventh <= 1e-15 && limit <= 1e-8;
    criterion(
        8,
        "fixed-point smoothing",
        pass,
        format!("alpha 0 identity {identity}, alpha 10 error {eleventh:.1e}, alpha 1e9 relative pull {limit:.1e} (tol 1e-8)"),
    )
}

fn c9_conic() -> Criterion {
    let ellipse = validate::on_ellipse(SEED, SAMPLES);
    let disc = validate::conic_discriminant(SEED, SAMPLES);
    let center = validate::conic_center(SEED, SAMPLES);
    let pass = ellipse.passed()
        && ellipse.max_error <= ON_ELLIPSE_TOL
        && disc.passed()
        && disc.max_error <= 1e-12
        && center.passed();
    criterion(
        9,
        "conic geometry",
        pass,
        format!(
            "on-ellipse max {:.2e} (tol {ON_ELLIPSE_TOL:.0e}), discriminant identity rel max {:.2e} over VVC and VWC, center stationarity rel max {:.2e}",
            ellipse.max_error, disc.max_error, center.max_error
        ),
    )
}

fn main() -> ExitCode {
    let runs: Vec<Run> = ["three_bus_vvc.json", "three_bus_vwc.json", "eight_bus_vvc.json", "eight_bus_vwc.json", "thirty_interval_vvc.json"]
        .into_iter()
        .map(run)
        .collect();
    let results = [
        c1_oracle_agreement(),
        c2_power_flow(&runs),
        c3_convergence(&runs),
        c4_tracking(&runs),
        c5_violations(&runs),
        c6_oscillation(&runs),
        c7_speedup(&runs),
        c8_fpi(),
        c9_conic(),
    ];
    for c in &results {
        println!("{} criterion {}: {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.id, c.title, c.detail);
    }
    let failed = results.iter().filter(|c| !c.pass).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
