use std::f64::consts::PI;

use fbmhd_core::aniso::{
    aniso_ladder, aniso_norm, boundary_slice, dstar, dstar_reordered, lift_from_boundary, smooth,
    smoothing_inequalities_report, sobolev_norm, trace_norm, MultiIndex,
};
use fbmhd_core::grid::{Grid, StField};
use fbmhd_core::interface::{smooth_step, Cutoff};
use proptest::prelude::*;

/// `tau(t) b(x1) sin(2 pi k x2)` sampled on `n_time` levels over `[0, 1]`.
fn profile(g: Grid, n_time: usize, k: f64, b: impl Fn(f64) -> f64) -> StField {
    let dt = 1.0 / (n_time - 1) as f64;
    let mut u = StField::zeros(g, n_time, dt, 1, false);
    let spatial = g.sample(1, |x, o| o[0] = b(x[0]) * (2.0 * PI * k * x[1]).sin());
    for lvl in 0..n_time {
        let tau = smooth_step(2.0 * lvl as f64 * dt)[0];
        for (o, s) in u.level_mut(lvl).iter_mut().zip(&spatial) {
            *o = tau * s;
        }
    }
    u
}

fn bump(x: f64) -> f64 {
    smooth_step(x - 0.5)[0] * (1.0 - smooth_step(x - 2.0)[0])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn smoothing_contracts_l2(seed in proptest::collection::vec(-1.0f64..1.0, 6), theta in 0.5f64..40.0) {
        let g = Grid::new(2, 17, 8, 2.0).unwrap();
        let mut u = StField::zeros(g, 9, 0.125, 1, false);
        for (i, x) in u.data.iter_mut().enumerate() {
            *x = seed[i % 6] * ((i * 7919) % 13) as f64 / 13.0;
        }
        let s = smooth(&u, theta);
        prop_assert!(s.l2() <= u.l2() * (1.0 + 1e-12));
    }

    #[test]
    fn norm_is_monotone_in_order(a in 0.1f64..2.0, k in 1.0f64..3.0) {
        let g = Grid::new(2, 33, 16, 4.0).unwrap();
        let u = profile(g, 9, k.round(), |x| a * bump(x));
        let ladder = aniso_ladder(&u, 4).unwrap();
        for w in ladder.windows(2) {
            prop_assert!(w[1] >= w[0]);
        }
        prop_assert!((ladder[0] - u.l2()).abs() < 1e-12 * u.l2().max(1.0));
    }
}

#[test]
fn operator_orderings_are_equivalent() {
    let mut ratios = Vec::new();
    for n in [33, 65] {
        let g = Grid::new(2, n, 16, 4.0).unwrap();
        let u = profile(g, 17, 1.0, |x| (-(x - 0.3) * (x - 0.3)).exp() * (1.0 - smooth_step(x - 2.5)[0]));
        let (mut a, mut b) = (0.0, 0.0);
        for alpha in MultiIndex::enumerate(2, 3) {
            a += dstar(&u, &alpha).unwrap().l2().powi(2);
            b += dstar_reordered(&u, &alpha).unwrap().l2().powi(2);
        }
        ratios.push((a / b).sqrt());
    }
    for r in &ratios {
        assert!(*r > 0.2 && *r < 5.0, "{ratios:?}");
    }
    assert!((ratios[0] - ratios[1]).abs() < 0.05, "{ratios:?}");
}

#[test]
fn trace_and_lift_ratios_are_bounded() {
    let cutoff = Cutoff::default();
    let mut trace = Vec::new();
    let mut lift = Vec::new();
    for n in [33, 65] {
        let g = Grid::new(2, n, 16, 4.0).unwrap();
        let u = profile(g, 17, 1.0, |x| (1.0 - smooth_step(x - 1.0)[0]) * (1.0 + x));
        let m = 3;
        trace.push(trace_norm(&u, m - 1).unwrap() / aniso_norm(&u, m).unwrap().value);
        let w = boundary_slice(&u);
        let lifted = lift_from_boundary(&w, &cutoff);
        lift.push(aniso_norm(&lifted, m).unwrap().value / sobolev_norm(&w, m - 1).unwrap());
    }
    for v in trace.iter().chain(&lift) {
        assert!(v.is_finite() && *v < 20.0, "{trace:?} {lift:?}");
    }
    assert!((trace[0] / trace[1] - 1.0).abs() < 0.1);
    assert!((lift[0] / lift[1] - 1.0).abs() < 0.1);
}

#[test]
fn smoothing_constants_stay_bounded() {
    let g = Grid::new(2, 33, 16, 4.0).unwrap();
    let u = profile(g, 17, 1.0, bump);
    let thetas = [2.0, 4.0, 8.0];
    let r = smoothing_inequalities_report(&u, &thetas, &[(0, 2), (1, 1), (2, 1), (1, 3)]).unwrap();
    assert!(r.bounded(), "{r:#?}");
    let zero = StField::like(&u, 1);
    let r0 = smoothing_inequalities_report(&zero, &thetas, &[(1, 2)]).unwrap();
    assert!(r0.p1a.iter().all(|row| row.vacuous));
}
