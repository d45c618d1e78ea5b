use fbmhd_core::fixtures::{alinhac_fixture, constant_basic, manufactured_pair, sheared_slab, slab_model, SlabParams};
use fbmhd_core::grid::{Grid, StField};
use fbmhd_core::linear::{
    adjoint_consistency, alinhac_residual, dt_limit, energy_ledger, from_good_unknown, good_unknown,
    homogenize_boundary, manufacture, solve_effective, AdjointSupport, AlinhacFixture, BasicSource,
    SolverConfig,
};
use fbmhd_core::fixtures::onset;
use std::sync::Arc;

/// Number of levels on `[0, t_end]` respecting the CFL limit of `basic`.
fn levels(basic: &dyn BasicSource, t_end: f64) -> (usize, f64) {
    let lim = dt_limit(basic, 0.0, 0.4).unwrap().min(dt_limit(basic, t_end, 0.4).unwrap());
    let steps = (t_end / lim).ceil() as usize;
    (steps + 1, t_end / steps as f64)
}

fn slab(n1: usize, nt: usize) -> fbmhd_core::linear::AnalyticBasic {
    sheared_slab(Grid::new(2, n1, nt, 4.0).unwrap(), slab_model(), SlabParams::default())
}

#[test]
fn zero_data_gives_zero_solution() {
    let b = slab(33, 16);
    let (nt, dt) = levels(&b, 0.3);
    let f = StField::zeros(b.grid, nt, dt, 6, false);
    let g = StField::zeros(b.grid, nt, dt, 2, true);
    let r = solve_effective(&b, &f, &g, &SolverConfig::default()).unwrap();
    assert_eq!(r.w.max_abs(), 0.0);
    assert_eq!(r.psi.max_abs(), 0.0);
    let ledger = energy_ledger(&r);
    assert!(ledger.per_step.iter().all(|x| *x == 0.0));
}

#[test]
fn superposition_holds() {
    let b = slab(33, 16);
    let (nt, dt) = levels(&b, 0.5);
    let (v1, p1) = manufactured_pair(2, 4.0, 1.0);
    let m1 = manufacture(&b, nt, dt, &v1, &p1).unwrap();
    let v2: fbmhd_core::linear::FieldFn = Arc::new(|t, x| (0..6).map(|c| onset(t, 0.3) * (x[0] * (c as f64 + 1.0)).sin() * (-x[0]).exp()).collect());
    let p2: fbmhd_core::linear::FrontFn = Arc::new(|t, x| onset(t, 0.3) * (6.283 * x[0]).sin());
    let m2 = manufacture(&b, nt, dt, &v2, &p2).unwrap();
    let (a, c) = (0.7, -1.3);
    let mut f = m1.f.scaled(a);
    f.axpy(c, &m2.f);
    let mut g = m1.g.scaled(a);
    g.axpy(c, &m2.g);
    let cfg = SolverConfig::default();
    let r1 = solve_effective(&b, &m1.f, &m1.g, &cfg).unwrap();
    let r2 = solve_effective(&b, &m2.f, &m2.g, &cfg).unwrap();
    let r = solve_effective(&b, &f, &g, &cfg).unwrap();
    let mut comb = r1.v_dot.scaled(a);
    comb.axpy(c, &r2.v_dot);
    comb.axpy(-1.0, &r.v_dot);
    let scale = r.v_dot.max_abs();
    assert!(comb.max_abs() <= 1e-11 * scale.max(1.0), "{}", comb.max_abs());
}

fn mms_error(n1: usize, nt: usize) -> (f64, f64) {
    let b = slab(n1, nt);
    let (n_time, dt) = levels(&b, 0.6);
    let (v, p) = manufactured_pair(2, 4.0, 0.1);
    let m = manufacture(&b, n_time, dt, &v, &p).unwrap();
    let r = solve_effective(&b, &m.f, &m.g, &SolverConfig::default()).unwrap();
    let mut e = r.v_dot.clone();
    e.axpy(-1.0, &m.v_dot);
    let mut ep = r.psi.clone();
    ep.axpy(-1.0, &m.psi);
    (e.l2() / m.v_dot.l2(), ep.l2() / m.psi.l2())
}

#[test]
fn manufactured_solution_converges() {
    let (e1, p1) = mms_error(33, 16);
    let (e2, p2) = mms_error(65, 32);
    let order = (e1 / e2).log2();
    let porder = (p1 / p2).log2();
    println!("mms: {e1:.3e} -> {e2:.3e} (order {order:.2}); psi {p1:.3e} -> {p2:.3e} ({porder:.2})");
    assert!(order >= 1.5, "order {order}");
}

#[test]
fn energy_ledger_and_sign() {
    let b = slab(33, 16);
    let (nt, dt) = levels(&b, 0.6);
    let (v, p) = manufactured_pair(2, 4.0, 0.1);
    let m = manufacture(&b, nt, dt, &v, &p).unwrap();
    let r = solve_effective(&b, &m.f, &m.g, &SolverConfig::default()).unwrap();
    let ledger = energy_ledger(&r);
    println!("ledger rel {:.3e}", ledger.relative);
    assert!(ledger.boundary_term_nonnegative);
}

fn alinhac(n1: usize, nt: usize, with_c: bool) -> f64 {
    alinhac_residual(&alinhac_fixture(Grid::new(2, n1, nt, 4.0).unwrap()), with_c).unwrap()
}

#[test]
fn alinhac_identity_converges() {
    let r: Vec<f64> = [(33, 16), (65, 32), (129, 64)].iter().map(|&(a, b)| alinhac(a, b, true)).collect();
    let o1 = (r[0] / r[1]).log2();
    let o2 = (r[1] / r[2]).log2();
    println!("alinhac {r:?} orders {o1:.2} {o2:.2}");
    assert!(o1 >= 3.0 && o2 >= 3.0, "{r:?}");
    let control = alinhac(65, 32, false);
    println!("control {control:.3e}");
    assert!(control > 0.05, "control {control:.3e}");
}

#[test]
fn alinhac_constant_state_is_exact() {
    let basic = constant_basic(Grid::new(2, 33, 16, 4.0).unwrap(), slab_model());
    let (v, psi) = manufactured_pair(2, 4.0, 0.3);
    let r = alinhac_residual(&AlinhacFixture { basic, v, psi, t0: 0.7 }, true).unwrap();
    assert!(r < 1e-12, "{r:e}");
}

#[test]
fn adjoint_matches_in_interior() {
    let b = constant_basic(Grid::new(2, 33, 16, 4.0).unwrap(), slab_model());
    let rep = adjoint_consistency(&b, 41, 0.025, 3, 7, AdjointSupport::Interior).unwrap();
    assert!(rep.max_mismatch < 1e-10, "{rep:?}");
    let mut errs = Vec::new();
    for (n1, nt) in [(33, 16), (65, 32)] {
        let b = slab(n1, nt);
        let steps = 40 * (n1 - 1) / 32;
        let rep = adjoint_consistency(&b, steps + 1, 1.0 / steps as f64, 3, 7, AdjointSupport::Interior).unwrap();
        errs.push(rep.max_mismatch);
    }
    println!("adjoint variable {errs:?}");
    assert!(errs[1] < errs[0]);
}

#[test]
fn good_unknown_round_trip() {
    let b = slab(33, 16);
    let (v, p) = manufactured_pair(2, 4.0, 1.0);
    let m = manufacture(&b, 5, 0.1, &v, &p).unwrap();
    let vd = good_unknown(&m.v_dot, &m.psi, &b).unwrap();
    let back = from_good_unknown(&vd, &m.psi, &b).unwrap();
    let mut e = back;
    e.axpy(-1.0, &m.v_dot);
    assert!(e.max_abs() < 1e-13 * m.v_dot.max_abs().max(1.0));
    let zero = StField::like(&m.psi, 1);
    assert_eq!(good_unknown(&m.v_dot, &zero, &b).unwrap().data, m.v_dot.data);
}

#[test]
fn homogenization_traces() {
    let grid = Grid::new(2, 33, 16, 4.0).unwrap();
    let mut g = StField::zeros(grid, 3, 0.1, 2, true);
    for (i, x) in g.data.iter_mut().enumerate() {
        *x = (i as f64 * 0.37).sin();
    }
    let v = homogenize_boundary(&g, &Default::default()).unwrap();
    for k in 0..3 {
        for jt in 0..grid.ntan() {
            assert_eq!(v.level(k)[jt * 6], g.level(k)[2 * jt + 1]);
            assert_eq!(v.level(k)[jt * 6 + 1], -g.level(k)[2 * jt]);
        }
    }
}

fn mms_run(n1: usize, nt: usize) -> (fbmhd_core::linear::LinearSolveResult, StField) {
    let b = slab(n1, nt);
    let (n_time, dt) = levels(&b, 0.6);
    let (v, p) = manufactured_pair(2, 4.0, 0.1);
    let m = manufacture(&b, n_time, dt, &v, &p).unwrap();
    (solve_effective(&b, &m.f, &m.g, &SolverConfig::default()).unwrap(), m.f)
}

#[test]
fn ledger_and_energy_ratio_under_refinement() {
    let mut res = Vec::new();
    let mut ratios = Vec::new();
    for (n1, nt) in [(33, 16), (65, 32)] {
        let (r, _) = mms_run(n1, nt);
        let l = energy_ledger(&r);
        res.push(l.max_residual);
        assert!(l.boundary_term_nonnegative);
        let boundary_psi = r.psi.l2();
        ratios.push((r.w.l2() + boundary_psi) / r.f_tilde.l2());
    }
    println!("ledger {res:?} ratios {ratios:?}");
    assert!(res[1] < res[0]);
    let v = ratios[0].max(ratios[1]) / ratios[0].min(ratios[1]);
    assert!(v < 2.0);
}

#[test]
fn tame_report_is_homogeneous() {
    use fbmhd_core::linear::tame_norm_report;
    let b = slab(33, 16);
    let (nt, dt) = levels(&b, 0.6);
    let (v, p) = manufactured_pair(2, 4.0, 0.1);
    let m = manufacture(&b, nt, dt, &v, &p).unwrap();
    let cfg = SolverConfig::default();
    let r = solve_effective(&b, &m.f, &m.g, &cfg).unwrap();
    let t1 = tame_norm_report(&r, &m.f, &m.g, &b, 2).unwrap();
    let (f2, g2) = (m.f.scaled(3.0), m.g.scaled(3.0));
    let r2 = solve_effective(&b, &f2, &g2, &cfg).unwrap();
    let t2 = tame_norm_report(&r2, &f2, &g2, &b, 2).unwrap();
    println!("tame {t1:?}");
    assert!((t1.ratio - t2.ratio).abs() < 1e-10 * t1.ratio);
    let zf = StField::like(&m.f, 6);
    let zg = StField::like(&m.g, 2);
    let rz = solve_effective(&b, &zf, &zg, &cfg).unwrap();
    let tz = tame_norm_report(&rz, &zf, &zg, &b, 2).unwrap();
    assert_eq!((tz.lhs, tz.rhs), (0.0, 0.0));
}

#[test]
fn interior_data_reaches_boundary_no_faster_than_waves() {
    use fbmhd_core::linear::CoeffSlice;
    let b = slab(65, 16);
    let (nt, dt) = levels(&b, 1.2);
    let speed = CoeffSlice::new(&b, 0.0, false).unwrap().max_speed();
    let mut f = StField::zeros(b.grid, nt, dt, 6, false);
    for k in 0..nt {
        let t = k as f64 * dt;
        let s = onset(t, 0.1) * (1.0 - onset(t - 0.1, 0.1));
        let lvl = f.level_mut(k);
        for p in 0..b.grid.np() {
            let x1 = b.grid.coords(p)[0];
            let w = (1.0 - ((x1 - 2.0) / 0.4).powi(2)).max(0.0).powi(4);
            for c in 0..6 {
                lvl[p * 6 + c] = s * w;
            }
        }
    }
    let g = StField::zeros(b.grid, nt, dt, 2, true);
    let r = solve_effective(&b, &f, &g, &SolverConfig::default()).unwrap();
    let arrival = 1.6 / speed + 0.2;
    let (mut early, mut late) = (0.0f64, 0.0f64);
    for k in 0..nt {
        let m = r.psi.level(k).iter().fold(0.0f64, |a, x| a.max(x.abs()));
        if (k as f64) * dt < 0.5 * (1.6 / speed) {
            early = early.max(m);
        } else {
            late = late.max(m);
        }
    }
    println!("speed {speed:.3} arrival {arrival:.3} early {early:.3e} late {late:.3e}");
    assert!(early < 1e-6 * late);
}

#[test]
fn relativistic_slab_solves() {
    let b = sheared_slab(Grid::new(2, 33, 16, 4.0).unwrap(), slab_model().with_eps(0.3), SlabParams::default());
    let (nt, dt) = levels(&b, 0.4);
    let (v, p) = manufactured_pair(2, 4.0, 0.1);
    let m = manufacture(&b, nt, dt, &v, &p).unwrap();
    let r = solve_effective(&b, &m.f, &m.g, &SolverConfig::default()).unwrap();
    let mut e = r.v_dot.clone();
    e.axpy(-1.0, &m.v_dot);
    println!("rel mms err {:.3e}", e.l2() / m.v_dot.l2());
    assert!(e.l2() < 0.05 * m.v_dot.l2());
}

#[test]
fn adjoint_with_boundary_terms_converges() {
    let mut errs = Vec::new();
    for (n1, nt) in [(33, 16), (65, 32)] {
        let b = slab(n1, nt);
        let steps = 40 * (n1 - 1) / 32;
        let rep = adjoint_consistency(&b, steps + 1, 1.0 / steps as f64, 3, 11, AdjointSupport::TouchingBoundary).unwrap();
        errs.push(rep.max_mismatch);
    }
    println!("adjoint boundary {errs:?}");
    assert!(errs[1] < 0.5 * errs[0], "{errs:?}");
}
