use std::f64::consts::TAU;
use std::sync::Arc;

use fbmhd_core::error::FbError;
use fbmhd_core::fixtures::{scenario, slab_model, taper, InitialData, SCENARIOS};
use fbmhd_core::grid::{Grid, StField};
use fbmhd_core::linear::{FieldFn, FrontFn};
use fbmhd_core::nash_moser::*;
use fbmhd_core::state::Layout;
use fbmhd_core::systems::fit_order;
use proptest::prelude::*;

fn grid2(n1: usize) -> Grid {
    Grid::new(2, n1, (n1 - 1) / 2, 4.0).unwrap()
}

fn sine(n1: usize) -> InitialData {
    scenario("sine-interface", grid2(n1), slab_model()).unwrap()
}

fn approx_for(s: &InitialData, t_end: f64) -> ApproximateSolution {
    let tr = compatibility_traces(&s.problem, &s.u0, &s.phi0, 3).unwrap();
    let nt = suggested_levels(&s.problem, &s.u0, &s.phi0, t_end, 0.4, 0.8).unwrap();
    build_approximate(&s.problem, &tr, t_end, nt).unwrap()
}

#[test]
fn first_schedule_step_from_one() {
    let s = theta_schedule(1.0, 2);
    assert_eq!(s[0].0, 1.0);
    assert!((s[1].0 - 2f64.sqrt()).abs() < 1e-15);
    assert!((s[0].1 - (2f64.sqrt() - 1.0)).abs() < 1e-15);
}

#[test]
fn schedule_bounds_hold_exactly_up_to_a_million() {
    for t0 in [1, 4, 16, 10_000] {
        assert!(theta_bounds_exact(t0, 1_000_000));
    }
    assert!(!theta_bounds_exact(0, 10));
}

proptest! {
    #[test]
    fn schedule_products_stay_in_band(theta0 in 1.0f64..100.0) {
        let s = theta_schedule(theta0, 200);
        for w in s.windows(2) {
            prop_assert!(w[1].1 < w[0].1);
        }
        for (t, dl) in s {
            let p = t * dl;
            prop_assert!((1.0 / 3.0 - 1e-12..=0.5 + 1e-12).contains(&p));
        }
    }
}

#[test]
fn unknown_scenario_is_rejected() {
    let e = scenario("nope", grid2(17), slab_model()).unwrap_err();
    assert!(matches!(e, FbError::InvalidInput(_)));
}

#[test]
fn scenarios_are_compatible_to_their_declared_order() {
    for d in [2, 3] {
        let g = Grid::new(d, 17, 8, 4.0).unwrap();
        for name in SCENARIOS {
            let s = scenario(name, g, slab_model()).unwrap();
            let m = s.declared_order.min(3);
            let tr = compatibility_traces(&s.problem, &s.u0, &s.phi0, m).unwrap();
            let v = check_compatibility(&tr, m);
            assert!(v.pass, "{name} d={d}: {:?}", v.residuals);
        }
    }
}

#[test]
fn constant_data_have_vanishing_traces() {
    let s = scenario("constant", Grid::new(3, 17, 8, 4.0).unwrap(), slab_model()).unwrap();
    let tr = compatibility_traces(&s.problem, &s.u0, &s.phi0, MAX_TRACE_ORDER).unwrap();
    for j in 1..=MAX_TRACE_ORDER {
        assert!(tr.u[j].iter().chain(&tr.phi[j]).all(|x| x.abs() < 1e-13), "order {j}");
    }
}

#[test]
fn first_front_trace_is_the_normal_velocity() {
    let s = scenario("rel-boost", Grid::new(3, 17, 8, 4.0).unwrap(), slab_model()).unwrap();
    let g = s.problem.grid;
    let n = s.problem.n();
    let l = Layout::new(3);
    let tr = compatibility_traces(&s.problem, &s.u0, &s.phi0, 1).unwrap();
    let dphi: Vec<Vec<f64>> = (0..2).map(|i| g.dtan_boundary(&s.phi0, 1, i)).collect();
    let mut worst: f64 = 0.0;
    for jt in 0..g.ntan() {
        let b = &s.u0[jt * n..(jt + 1) * n];
        let direct = b[l.v(0)] - dphi[0][jt] * b[l.v(1)] - dphi[1][jt] * b[l.v(2)];
        worst = worst.max((tr.phi[1][jt] - direct).abs());
    }
    assert!(worst < 1e-14, "{worst}");
    assert!(tr.phi[1].iter().any(|x| x.abs() > 1e-3));
}

#[test]
fn second_trace_matches_marched_difference() {
    let s = sine(17);
    let tr = compatibility_traces(&s.problem, &s.u0, &s.phi0, 2).unwrap();
    let dts = [0.02, 0.01, 0.005];
    let errs: Vec<f64> = dts
        .iter()
        .map(|&dt| {
            let (u2, p2) = marched_second_derivative(&s.problem, &s.u0, &s.phi0, dt).unwrap();
            let eu = u2.iter().zip(&tr.u[2]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let ep = p2.iter().zip(&tr.phi[2]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            eu.max(ep)
        })
        .collect();
    let order = fit_order(&dts, &errs);
    assert!(order >= 1.9, "order {order}, errors {errs:?}");
}

#[test]
fn boundary_pressure_offset_fails_at_order_zero() {
    let mut s = sine(17);
    let n = s.problem.n();
    for jt in 0..s.problem.grid.ntan() {
        s.u0[jt * n] += 1e-3;
    }
    let tr = compatibility_traces(&s.problem, &s.u0, &s.phi0, 2).unwrap();
    let v = check_compatibility(&tr, 2);
    assert_eq!(v.first_failure, Some(0));
    assert!(!v.pass);
}

#[test]
fn verdict_reports_only_computed_orders() {
    let s = sine(17);
    let tr = compatibility_traces(&s.problem, &s.u0, &s.phi0, 1).unwrap();
    let v = check_compatibility(&tr, 5);
    assert_eq!(v.order, 1);
    assert_eq!(v.residuals.len(), 2);
    assert!(v.pass);
}

#[test]
fn approximate_solution_meets_its_constraints() {
    let s = sine(33);
    let ap = approx_for(&s, 0.1);
    let (kin, hn) = boundary_constraint_residuals(&ap.u, &ap.phi);
    assert!(kin < 1e-10, "kinematic {kin}");
    assert!(hn < 1e-12, "H_N {hn}");
    assert!(ap.h_normal_drift < 1e-4, "transport drift {}", ap.h_normal_drift);
    assert!(ap.margins.min_d1_phi >= 0.625 && ap.margins.min_dq1 >= 0.75 * s.problem.kappa0);
}

#[test]
fn forcing_shrinks_with_the_horizon() {
    let s = sine(17);
    let long = approx_for(&s, 0.2).f.l2();
    let short = approx_for(&s, 0.1).f.l2();
    assert!(short < long, "{short} vs {long}");
}

#[test]
fn zero_iterate_gives_the_approximate_state() {
    let s = sine(17);
    let ap = approx_for(&s, 0.1);
    let v = StField::like(&ap.u, ap.u.nc);
    let psi = StField::like(&ap.phi, 1);
    let ms = modified_state(&s.problem, &ap, &v, &psi, 4.0).unwrap();
    assert_eq!(ms.v.max_abs(), 0.0);
    assert_eq!(ms.psi.max_abs(), 0.0);
    assert_eq!(ms.basic.u.data, ap.u.data);
    assert!(ms.kinematic_residual < 1e-10);
}

#[test]
fn zero_forcing_is_an_exact_fixpoint() {
    let s = sine(33);
    let mut ap = approx_for(&s, 0.1);
    ap.f = StField::like(&ap.f, ap.f.nc);
    let cfg = NmConfig { n_max: 20, tol: 0.0, ..Default::default() };
    let run = run_nash_moser(&s.problem, &ap, &cfg);
    assert!(run.failure.is_none(), "{:?}", run.failure);
    assert_eq!(run.records.len(), 20);
    assert!(run.records.iter().all(|r| r.delta_norms.iter().all(|x| *x == 0.0)));
    assert_eq!(run.state.v.max_abs(), 0.0);
    assert_eq!(run.state.psi.max_abs(), 0.0);
    let rep = convergence_report(&run.records, cfg.alpha, None);
    assert!(rep.degenerate && rep.pass);
}

#[test]
fn iteration_telescopes_and_decreases() {
    let s = sine(33);
    let ap = approx_for(&s, 0.1);
    // The default theta0 = 4 stalls on this grid; a wider initial band makes
    // the early steps Newton-like.
    let cfg = NmConfig { theta0: 64.0, n_max: 6, splits: true, ..Default::default() };
    let run = run_nash_moser(&s.problem, &ap, &cfg);
    assert!(run.failure.is_none(), "{:?}", run.failure);
    for r in &run.records {
        assert!(r.telescoping[0] < 1e-9 && r.telescoping[1] < 1e-9, "step {}: {:?}", r.n, r.telescoping);
        let sp = r.splits.as_ref().unwrap();
        assert!(sp.mismatch[0] < 1e-9 && sp.mismatch[1] < 1e-9, "step {}: {:?}", r.n, sp.mismatch);
        assert!(r.kinematic_residual < 1e-10);
    }
    let rep = convergence_report(&run.records, cfg.alpha, None);
    assert!(rep.monotone_after_two, "{:?}", run.records.iter().map(|r| r.delta_norms[6]).collect::<Vec<_>>());
    assert!(run.records.last().unwrap().residual < 0.1 * ap.f.l2());
}

#[test]
fn report_flags_the_failed_step() {
    let rep = convergence_report(&[], 12.0, Some(3));
    assert_eq!(rep.flagged_step, Some(3));
    assert!(!rep.pass);
}

#[test]
fn approximate_solution_refuses_a_marginal_pressure_slope() {
    let s = scenario("rt-marginal", grid2(17), slab_model()).unwrap();
    let tr = compatibility_traces(&s.problem, &s.u0, &s.phi0, 1).unwrap();
    let e = build_approximate(&s.problem, &tr, 0.1, 8).unwrap_err();
    assert!(matches!(e, FbError::MarginLost(_)), "{e}");
}

#[test]
fn constant_state_is_stationary_under_the_march() {
    let s = scenario("constant", Grid::new(3, 17, 8, 4.0).unwrap(), slab_model()).unwrap();
    let m = nonlinear_march(&s.problem, &s.u0, &s.phi0, &MarchConfig::new(0.01, 10), None).unwrap();
    let du = m.u.level(10).iter().zip(&s.u0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(du < 1e-13, "{du}");
    assert!(m.phi.level(10).iter().all(|x| x.abs() < 1e-13));
}

#[test]
fn marginal_scenario_loses_the_sign_condition() {
    let s = scenario("rt-marginal", grid2(17), slab_model()).unwrap();
    let e = nonlinear_march(&s.problem, &s.u0, &s.phi0, &MarchConfig::new(0.01, 5), None).unwrap_err();
    assert!(matches!(e, FbError::SignConditionLost { .. }), "{e}");
}

#[test]
fn march_rejects_oversized_steps() {
    let s = sine(17);
    let e = nonlinear_march(&s.problem, &s.u0, &s.phi0, &MarchConfig::new(1.0, 1), None).unwrap_err();
    assert!(matches!(e, FbError::CflViolation { .. }));
}

fn manufactured(len: f64) -> (FieldFn, FrontFn) {
    let u: FieldFn = Arc::new(move |t, x| {
        let e = (-x[0]).exp();
        let tp = t * taper(x[0], len);
        let (sn, cs) = (TAU * x[1]).sin_cos();
        vec![
            0.5 * (1.0 - e) * (1.0 + 0.2 * tp * sn),
            0.05 * tp * cs * (1.0 + x[0]),
            0.05 * tp,
            0.02 * sn * e * (1.0 + tp),
            0.3 + 0.05 * tp * x[0] * e,
            0.05 * sn * e,
        ]
    });
    let phi: FrontFn = Arc::new(|t, x| 0.02 * (TAU * x[0]).sin() * (1.0 + t));
    (u, phi)
}

#[test]
fn march_recovers_a_manufactured_solution() {
    let (us, ps) = manufactured(4.0);
    let t_end = 0.2;
    let mut hs = vec![];
    let mut errs = vec![];
    for n1 in [17, 33] {
        let mut s = sine(n1);
        let g = s.problem.grid;
        s.u0 = g.sample(6, |x, o| o.copy_from_slice(&us(0.0, x)));
        s.phi0 = g.sample_boundary(1, |x, o| o[0] = ps(0.0, x));
        let src = manufactured_source(&s.problem, us.clone(), ps.clone());
        let steps = 5 * (n1 - 1) / 4;
        let m = nonlinear_march(&s.problem, &s.u0, &s.phi0, &MarchConfig::new(t_end / steps as f64, steps), Some(&src))
            .unwrap();
        let exact = g.sample(6, |x, o| o.copy_from_slice(&us(t_end, x)));
        let got = m.u.level(steps);
        let e: f64 = (0..g.np()).map(|p| g.weight(p) * (0..6).map(|c| (got[p * 6 + c] - exact[p * 6 + c]).powi(2)).sum::<f64>()).sum();
        hs.push(g.h1());
        errs.push(e.sqrt());
    }
    let order = fit_order(&hs, &errs);
    assert!(order >= 1.5, "order {order}, errors {errs:?}");
}

#[test]
fn constraints_propagate_at_discretization_order() {
    let mut hs = vec![];
    let mut errs = vec![];
    for n1 in [17, 33] {
        let s = sine(n1);
        let g = s.problem.grid;
        let steps = 4 * (n1 - 1) / 8;
        let m = nonlinear_march(&s.problem, &s.u0, &s.phi0, &MarchConfig::new(0.05 / steps as f64, steps), None).unwrap();
        assert!(m.samples[0].h_normal < 1e-12 && m.samples[0].div_h < 1e-11);
        hs.push(g.h1());
        errs.push(m.samples.iter().map(|x| x.h_normal.max(x.div_h)).fold(0.0, f64::max));
    }
    let order = fit_order(&hs, &errs);
    assert!(order >= 1.5, "order {order}, errors {errs:?}");
}
