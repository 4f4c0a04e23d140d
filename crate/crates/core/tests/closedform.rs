use endico::closedform::{
    build_subproblem, conic_descriptor, node_numeric_oracle, vvc_dispatch, vvc_unconstrained, vvc_voltage_projection,
    vwc_dispatch, vwc_voltage_projection, Binding, NodeSubproblem, OracleObjective, SubproblemInputs,
    VoltageProjection, X_DER, X_V,
};
use endico::feeder::{ControlMode, Line};
use endico::scenario::{DEFAULT_V_MAX_SQ, DEFAULT_V_MIN_SQ};
use endico::validate::{random_subproblem, SubproblemRanges};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

// Frozen from a 40-digit mpmath minimization of x4 along the lower branch of
// the solution ellipse (V = 1, z1 = z2 = 0.01, P = 0.5, Q = 0.2).
const X4_STAR_REF: f64 = 0.252_531_694_167_329_2;
const X5_STAR_REF: f64 = 0.202_525_316_941_673_3;
// Frozen from a 40-digit root of v_j(x5) = 1.05^2 with x4 estimated as
// (P^2 + (Q - x5)^2) / V (V = 1, z1 = z2 = 0.01, P = -0.5, Q = 0).
const VUB_REF: f64 = 4.864_094_115_659_98;

#[allow(clippy::too_many_arguments)]
fn sp(mode: ControlMode, p: f64, q: f64, v: f64, z1: f64, z2: f64, l5: f64, u5: f64) -> NodeSubproblem {
    NodeSubproblem {
        mode,
        big_p: p,
        big_q: q,
        v_up: v,
        z1,
        z2,
        lower: [f64::NEG_INFINITY, f64::NEG_INFINITY, DEFAULT_V_MIN_SQ, 0.0, l5],
        upper: [f64::INFINITY, f64::INFINITY, DEFAULT_V_MAX_SQ, 1e6, u5],
    }
}

fn line(r: f64, x: f64) -> Line {
    Line { from: 0, to: 1, r, x, ampacity_sq: 10.0 }
}

#[test]
fn volt_var_constants_follow_the_capability_circle() {
    let l = line(0.01, 0.02);
    let s = build_subproblem(SubproblemInputs {
        bus: "a",
        mode: ControlMode::Vvc,
        parent_v_sq: 1.0,
        child_flow: (0.0, 0.0),
        load: (0.0, 0.0),
        der_available: 0.8,
        der_rating: 1.0,
        line: &l,
        voltage_bounds: (DEFAULT_V_MIN_SQ, DEFAULT_V_MAX_SQ),
    })
    .unwrap();
    assert!((s.big_p + 0.8).abs() < 1e-15);
    assert!((s.upper[X_DER] - 0.6).abs() < 1e-15);
    assert!((s.lower[X_DER] + 0.6).abs() < 1e-15);
}

#[test]
fn volt_watt_constants_sum_children_and_load() {
    let l = line(0.01, 0.02);
    let s = build_subproblem(SubproblemInputs {
        bus: "a",
        mode: ControlMode::Vwc,
        parent_v_sq: 1.0,
        child_flow: (0.2, 0.1),
        load: (0.05, 0.02),
        der_available: 0.3,
        der_rating: 0.36,
        line: &l,
        voltage_bounds: (DEFAULT_V_MIN_SQ, DEFAULT_V_MAX_SQ),
    })
    .unwrap();
    assert!((s.big_p - 0.25).abs() < 1e-15);
    assert!((s.big_q - 0.12).abs() < 1e-15);
    assert_eq!((s.lower[X_DER], s.upper[X_DER]), (0.0, 0.3));
}

#[test]
fn capability_error_names_the_bus() {
    let l = line(0.01, 0.02);
    let err = build_subproblem(SubproblemInputs {
        bus: "pv7",
        mode: ControlMode::Vvc,
        parent_v_sq: 1.0,
        child_flow: (0.0, 0.0),
        load: (0.0, 0.0),
        der_available: 1.1,
        der_rating: 1.0,
        line: &l,
        voltage_bounds: (DEFAULT_V_MIN_SQ, DEFAULT_V_MAX_SQ),
    })
    .unwrap_err();
    assert!(err.to_string().contains("pv7"));
}

#[test]
fn unconstrained_minimizer_matches_frozen_reference() {
    let s = sp(ControlMode::Vvc, 0.5, 0.2, 1.0, 0.01, 0.01, -10.0, 10.0);
    let (x4, x5) = vvc_unconstrained(&s).unwrap();
    assert!((x4 - X4_STAR_REF).abs() < 1e-12, "{x4}");
    assert!((x5 - X5_STAR_REF).abs() < 1e-12, "{x5}");
    assert!(s.ellipse_residual(x4, x5).abs() < 1e-12);
}

#[test]
fn zero_demand_minimizer_is_trivial() {
    let s = sp(ControlMode::Vvc, 0.0, 0.3, 1.02, 0.02, 0.03, -1.0, 1.0);
    assert_eq!(vvc_unconstrained(&s).unwrap(), (0.0, 0.3));
}

#[test]
fn reverse_flow_projection_matches_frozen_root() {
    let s = sp(ControlMode::Vvc, -0.5, 0.0, 1.0, 0.01, 0.01, -10.0, 10.0);
    let VoltageProjection::Bound(vub) = vvc_voltage_projection(&s).unwrap() else {
        panic!("bound expected")
    };
    assert!((vub - VUB_REF).abs() < 1e-9, "{vub}");
}

#[test]
fn parent_at_bound_leaves_no_headroom() {
    let v = DEFAULT_V_MAX_SQ;
    let a = sp(ControlMode::Vvc, 0.0, 0.0, v, 0.01, 0.02, -1.0, 1.0);
    let b = sp(ControlMode::Vwc, 0.0, 0.0, v, 0.01, 0.02, 0.0, 1.0);
    assert_eq!(vvc_voltage_projection(&a).unwrap(), VoltageProjection::Bound(0.0));
    assert_eq!(vwc_voltage_projection(&b).unwrap(), VoltageProjection::Bound(0.0));
}

#[test]
fn exhausted_inverter_dispatches_zero() {
    let a = sp(ControlMode::Vvc, 0.4, 0.2, 1.0, 0.01, 0.02, 0.0, 0.0);
    assert_eq!(vvc_dispatch(&a).unwrap().value, 0.0);
    let b = sp(ControlMode::Vwc, 0.4, 0.2, 1.0, 0.01, 0.02, 0.0, 0.0);
    assert_eq!(vwc_dispatch(&b).unwrap().value, 0.0);
}

#[test]
fn light_load_volt_watt_is_not_curtailed() {
    let s = sp(ControlMode::Vwc, 0.3, 0.1, 1.0, 0.01, 0.02, 0.0, 0.2);
    let d = vwc_dispatch(&s).unwrap();
    assert_eq!(d.value, 0.2);
    assert_eq!(d.binding, Binding::UpperLimit);
    assert!(d.x5_vub.unwrap() > 0.2);
}

#[test]
fn slack_volt_var_dispatch_is_the_loss_minimizer() {
    let s = sp(ControlMode::Vvc, 0.5, 0.2, 1.0, 0.01, 0.01, -1.0, 1.0);
    let d = vvc_dispatch(&s).unwrap();
    assert_eq!(d.binding, Binding::Unconstrained);
    let o = node_numeric_oracle(&s, OracleObjective::MinX4).unwrap();
    assert!((d.value - o.x5).abs() < 1e-6, "{} {}", d.value, o.x5);
}

/// Bisection on the voltage rebuilt with the projection's current estimate.
fn estimated_voltage_root(s: &NodeSubproblem, mut lo: f64, mut hi: f64) -> f64 {
    let f = |x5: f64| {
        let [_, _, v] = s.linear_solution(s.x4_approx(x5), x5);
        v - s.upper[X_V]
    };
    assert!(f(lo) <= 0.0 && f(hi) > 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

#[test]
fn export_curtailment_matches_numeric_maximizer() {
    // Stressed export node: generation well above local demand.
    let s = sp(ControlMode::Vwc, 0.05, 0.02, 1.06, 0.03, 0.04, 0.0, 1.5);
    let d = vwc_dispatch(&s).unwrap();
    assert_eq!(d.binding, Binding::VoltageBound);
    assert!(d.value < s.upper[X_DER]);
    let root = estimated_voltage_root(&s, 0.0, 1.5);
    assert!((d.value - root).abs() < 1e-6, "{} {root}", d.value);
    // Against the exact reduced model the difference is the projection's
    // current-estimate error.
    let exact = node_numeric_oracle(&s, OracleObjective::MaxX5).unwrap();
    let gap = (d.value - exact.x5).abs();
    eprintln!("closed form {} exact-model maximizer {} gap {gap:.3e}", d.value, exact.x5);
    assert!(gap < 5e-3, "{gap}");
}

#[test]
fn conic_center_matches_reduced_formula() {
    let s = sp(ControlMode::Vvc, 0.5, 0.2, 1.0, 0.01, 0.01, -1.0, 1.0);
    let c = conic_descriptor(&s);
    let (x4, x5) = c.center.unwrap();
    let (p, q, v, z1, z2) = (0.5, 0.2, 1.0, 0.01, 0.01);
    let x4_ref = (v - 2.0 * p * z1) / (2.0 * z1 * z1);
    let x5_ref = (v * z2 + 2.0 * q * z1 * z1 - 2.0 * p * z1 * z2) / (2.0 * z1 * z1);
    assert!((x4 - x4_ref).abs() < 1e-9 && (x5 - x5_ref).abs() < 1e-9);
    assert!((x4 - 4950.0).abs() < 1e-9 && (x5 - 49.7).abs() < 1e-9);
}

#[test]
fn theta_uses_standard_rotation() {
    let s = sp(ControlMode::Vvc, 0.1, 0.1, 1.0, 0.02, 0.05, -1.0, 1.0);
    let c = conic_descriptor(&s);
    // Rotating by theta removes the cross term.
    let (st, ct) = c.theta.sin_cos();
    let cross = 2.0 * (c.c - c.a) * st * ct + c.b * (ct * ct - st * st);
    assert!(cross.abs() < 1e-15, "{cross}");
}

#[test]
fn seeded_suite_compares_hundreds_of_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let ranges = SubproblemRanges::projection_regime();
    let mut on_bound = 0;
    for _ in 0..300 {
        let s = random_subproblem(&mut rng, ControlMode::Vwc, &ranges);
        if let endico::validate::Agreement::Compared { gap, .. } = endico::validate::compare_with_oracle(&s) {
            assert!(gap <= 1e-6, "{s:?}");
            if vwc_dispatch(&s).unwrap().binding == Binding::VoltageBound {
                on_bound += 1;
            }
        }
    }
    assert!(on_bound >= 10, "{on_bound}");
}

fn any_subproblem(mode: ControlMode) -> impl Strategy<Value = NodeSubproblem> {
    (1e-4..0.1f64, 1e-4..0.1f64, 0.81..1.21f64, -1.0..1.0f64, -1.0..1.0f64, 0.05..1.5f64, 0.0..1.0f64).prop_map(
        move |(z1, z2, v, p, q, rating, frac)| {
            let p_avail = rating * frac;
            let (l5, u5) = match mode {
                ControlMode::Vvc => {
                    let m = (rating * rating - p_avail * p_avail).sqrt();
                    (-m, m)
                }
                ControlMode::Vwc => (0.0, p_avail),
            };
            sp(mode, p, q, v, z1, z2, l5, u5)
        },
    )
}

proptest! {
    #[test]
    fn volt_var_dispatch_is_boxed(s in any_subproblem(ControlMode::Vvc)) {
        if let Ok(d) = vvc_dispatch(&s) {
            prop_assert!(d.value >= s.lower[X_DER] && d.value <= s.upper[X_DER]);
        }
    }

    #[test]
    fn volt_watt_dispatch_is_boxed(s in any_subproblem(ControlMode::Vwc)) {
        let d = vwc_dispatch(&s).unwrap();
        prop_assert!(d.value >= 0.0 && d.value <= s.upper[X_DER]);
    }

    #[test]
    fn minimizer_is_on_ellipse(s in any_subproblem(ControlMode::Vvc)) {
        if let Ok((x4, x5)) = vvc_unconstrained(&s) {
            prop_assert!(s.ellipse_residual(x4, x5).abs() <= 1e-9);
        }
    }

    #[test]
    fn linear_solution_satisfies_equalities(s in any_subproblem(ControlMode::Vvc), x4 in 0.0..2.0f64, x5 in -1.0..1.0f64) {
        let [x1, x2, x3] = s.linear_solution(x4, x5);
        let (pr, qr) = s.receiving_power(x5);
        prop_assert!((x1 - s.z1 * x4 - pr).abs() <= 1e-15);
        prop_assert!((x2 - s.z2 * x4 - qr).abs() <= 1e-15);
        let v = s.v_up - 2.0 * (s.z1 * x1 + s.z2 * x2) + s.z_sq() * x4;
        prop_assert!((x3 - v).abs() <= 1e-15);
    }

    #[test]
    fn conic_discriminant_identity(s in any_subproblem(ControlMode::Vvc)) {
        let c = conic_descriptor(&s);
        prop_assert!((c.discriminant() + 4.0 * s.z1 * s.z1).abs() <= 1e-15);
    }
}

#[test]
fn singleton_box_returns_its_point() {
    let a = sp(ControlMode::Vvc, 0.4, 0.1, 1.0, 0.01, 0.02, 0.3, 0.3);
    assert_eq!(vvc_dispatch(&a).unwrap().value, 0.3);
    let b = sp(ControlMode::Vwc, 0.4, 0.1, 1.0, 0.01, 0.02, 0.2, 0.2);
    assert_eq!(vwc_dispatch(&b).unwrap().value, 0.2);
}
