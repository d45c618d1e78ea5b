//! Verification checks shared by the subcommands and the acceptance suite.
//! Each returns a [`Verdict`] with the measured quantities; numerical
//! failures inside a check turn into a failing verdict.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use fbmhd_core::aniso::{smooth, smoothing_inequalities_report};
use fbmhd_core::eos::EosModel;
use fbmhd_core::error::{FbError, FbResult};
use fbmhd_core::fixtures::{
    alinhac_fixture, manufactured_pair, onset, scenario, sheared_slab, slab_model, InitialData, SlabParams,
};
use fbmhd_core::grid::{Grid, StField};
use fbmhd_core::interface::smooth_step;
use fbmhd_core::linear::{
    alinhac_residual, dt_limit, energy_ledger, manufacture, solve_effective, AnalyticBasic, FieldFn, FrontFn, SolverConfig,
};
use fbmhd_core::nash_moser::*;
use fbmhd_core::state::{relative_skew, sym_eigenvalues, Layout};
use fbmhd_core::systems::{
    assemble, assemble_generic, assemble_nonrel, boundary_inertia, conservative_residual_rel, expected_boundary_form,
    fit_order, lifted_a1, nonrel_limit_gap, rel_blocks, symmetric_time_derivative, RelJet,
};

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct Verdict {
    pub name: String,
    pub pass: bool,
    pub detail: String,
    pub measured: BTreeMap<String, f64>,
}

impl Verdict {
    fn new(name: &str, pass: bool, detail: String, measured: &[(&str, f64)]) -> Self {
        Verdict {
            name: name.into(),
            pass,
            detail,
            measured: measured.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }

    fn from_result(name: &str, r: FbResult<Verdict>) -> Verdict {
        r.unwrap_or_else(|e| Verdict::new(name, false, format!("error: {e}"), &[]))
    }
}

/// Random state with fluid pressure near one, so the density stays in band.
fn sci(xs: &[f64]) -> String {
    let v: Vec<String> = xs.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", v.join(", "))
}

fn fixed(xs: &[f64], digits: usize) -> String {
    let v: Vec<String> = xs.iter().map(|x| format!("{x:.digits$}")).collect();
    format!("[{}]", v.join(", "))
}

fn random_state(rng: &mut ChaCha8Rng, d: usize, vmax: f64) -> Vec<f64> {
    let l = Layout::new(d);
    let mut u = vec![0.0; l.n()];
    for i in 0..d {
        u[l.v(i)] = rng.gen_range(-1.0..1.0) * vmax / (d as f64).sqrt();
        u[l.h(i)] = rng.gen_range(-1.0..1.0);
    }
    let h2: f64 = (0..d).map(|i| u[l.h(i)].powi(2)).sum();
    u[0] = rng.gen_range(0.5..2.0) + 0.5 * h2;
    u[l.s()] = rng.gen_range(-0.5..0.5);
    u
}

fn speed(u: &[f64], d: usize) -> f64 {
    let l = Layout::new(d);
    (0..d).map(|i| u[l.v(i)].powi(2)).sum::<f64>().sqrt()
}

/// Symmetry of every assembled matrix and positivity of the time matrices
/// over `samples` random states per dimension, at `eps_c` in
/// `{0, 0.3, 0.9 / max |v|}`. States the relativistic model rejects
/// (sound speed not below light speed) are redrawn and counted.
pub fn symmetry_positivity(seed: u64, samples: usize) -> Verdict {
    let name = "symmetry and positivity";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut skew, mut min_a0, mut min_b0) = (0.0f64, f64::INFINITY, f64::INFINITY);
    let mut redrawn = 0usize;
    let mut tested = 0usize;
    let base = EosModel::default();
    for d in [2, 3] {
        let n = 2 * d + 2;
        let mut states: Vec<Vec<f64>> = (0..samples).map(|_| random_state(&mut rng, d, 0.9)).collect();
        let vmax = states.iter().map(|u| speed(u, d)).fold(0.0, f64::max);
        let eps_list = [0.0, 0.3, 0.9 / vmax];
        for u in states.iter_mut() {
            let mut tries = 0;
            while eps_list.iter().any(|e| assemble(u, &base.with_eps(*e), d).is_err()) {
                tries += 1;
                if tries > 1000 {
                    return Verdict::new(name, false, "could not draw admissible states".into(), &[]);
                }
                redrawn += 1;
                *u = random_state(&mut rng, d, 0.9);
                while speed(u, d) > vmax {
                    *u = random_state(&mut rng, d, 0.9);
                }
            }
        }
        for u in &states {
            for &eps in &eps_list {
                let model = base.with_eps(eps);
                let m = assemble(u, &model, d).expect("checked above");
                for k in 0..=d {
                    skew = skew.max(relative_skew(&m.a[k], n));
                }
                min_a0 = min_a0.min(sym_eigenvalues(&m.a[0], n)[0]);
                if eps > 0.0 {
                    match rel_blocks(u, &model, d) {
                        Ok(b) => {
                            for k in 0..=d {
                                skew = skew.max(relative_skew(&b.b[k], n));
                            }
                            min_b0 = min_b0.min(sym_eigenvalues(&b.b[0], n)[0]);
                        }
                        Err(e) => return Verdict::new(name, false, format!("error: {e}"), &[]),
                    }
                }
                tested += 1;
            }
        }
    }
    let pass = skew < 1e-12 && min_a0 > 0.0 && min_b0 > 0.0;
    Verdict::new(
        name,
        pass,
        format!("{tested} assemblies, max relative skew {skew:.2e}, min eig A0 {min_a0:.3e}, min eig B0 {min_b0:.3e}, {redrawn} redrawn"),
        &[("max_relative_skew", skew), ("min_eig_a0", min_a0), ("min_eig_b0", min_b0), ("redrawn", redrawn as f64)],
    )
}

/// Lifted normal matrix on boundary-consistent states against the closed
/// form `(0, c N^T; c N, 0)` and its inertia `(1, 1, 2d)`.
pub fn boundary_structure(seed: u64, samples: usize) -> Verdict {
    let name = "boundary structure";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut bad_inertia = 0usize;
    let mut count = 0usize;
    for d in [2, 3] {
        let l = Layout::new(d);
        for &eps in &[0.0, 0.4, 0.9] {
            let model = EosModel::default().with_eps(eps);
            for _ in 0..samples {
                let mut u = random_state(&mut rng, d, 0.9);
                let grad: Vec<f64> = (2..=d).map(|_| rng.gen_range(-0.8..0.8)).collect();
                u[l.h(0)] = (2..=d).map(|i| grad[i - 2] * u[l.h(i - 1)]).sum();
                let mut normal = vec![1.0];
                normal.extend(grad.iter().map(|g| -g));
                let vn: f64 = (0..d).map(|i| normal[i] * u[l.v(i)]).sum();
                let bm = match lifted_a1(&u, &grad, vn, 1.0, &model, d) {
                    Ok(b) => b,
                    Err(FbError::SubluminalViolation { .. }) => continue,
                    Err(e) => return Verdict::new(name, false, format!("error: {e}"), &[]),
                };
                let gamma = if eps > 0.0 { 1.0 / (1.0 - eps * eps * speed(&u, d).powi(2)).sqrt() } else { 1.0 };
                worst = worst.max((bm.a1_tilde - expected_boundary_form(d, &normal, gamma)).norm());
                if boundary_inertia(&bm, 1e-10) != (1, 1, 2 * d) {
                    bad_inertia += 1;
                }
                count += 1;
            }
        }
    }
    Verdict::new(
        name,
        worst < 1e-12 && bad_inertia == 0 && count > 0,
        format!("{count} states, max residual {worst:.2e}, {bad_inertia} with wrong inertia"),
        &[("max_residual", worst), ("wrong_inertia", bad_inertia as f64), ("states", count as f64)],
    )
}

/// Distance between the relativistic and non-relativistic matrices along a
/// decreasing `eps_c` sequence: the smallest fitted order over sample
/// states, and the gap of the relativistic formulas evaluated at `eps_c = 0`.
pub fn light_speed_uniformity(seed: u64, eps: &[f64], states: usize) -> Verdict {
    let name = "light-speed uniformity";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_order = f64::INFINITY;
    let mut zero_gap = 0.0f64;
    let mut tables = Vec::new();
    for s in 0..states {
        let d = 2 + s % 2;
        let u = random_state(&mut rng, d, 0.9);
        let model = EosModel::default();
        match nonrel_limit_gap(&u, &model, d, eps) {
            Ok(t) => {
                min_order = min_order.min(t.order);
                tables.push(t);
            }
            Err(e) => return Verdict::new(name, false, format!("error: {e}"), &[]),
        }
        let (rel0, _) = assemble_generic(&u, &model.with_eps(0.0), d);
        let base = match assemble_nonrel(&u, &model, d) {
            Ok(b) => b,
            Err(e) => return Verdict::new(name, false, format!("error: {e}"), &[]),
        };
        for k in 0..=d {
            let m = fbmhd_core::state::to_m8(&rel0[k]);
            zero_gap = zero_gap.max((m - base.a[k]).norm());
        }
    }
    let pass = min_order >= 1.9 && zero_gap < 1e-14;
    let last = tables
        .first()
        .map(|t| {
            let totals: Vec<f64> = t.gaps.iter().map(|g| g.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
            format!(", first state gaps {}", sci(&totals))
        })
        .unwrap_or_default();
    Verdict::new(
        name,
        pass,
        format!("min fitted order {min_order:.3} over {states} states, gap at eps_c = 0: {zero_gap:.1e}{last}"),
        &[("min_order", min_order), ("zero_gap", zero_gap)],
    )
}

/// Jets solving the symmetric relativistic system satisfy the conservative
/// equations.
pub fn conservative_equivalence(seed: u64, jets: usize) -> Verdict {
    let name = "conservative equivalence";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for trial in 0..jets {
        let d = if trial % 2 == 0 { 2 } else { 3 };
        let l = Layout::new(d);
        let eps = rng.gen_range(0.05..1.0);
        let model = EosModel::default().with_eps(eps);
        let mut val = vec![0.0; l.n()];
        val[0] = rng.gen_range(0.5..2.0);
        for i in 0..d {
            val[l.v(i)] = rng.gen_range(-0.8..0.8);
            val[l.h(i)] = rng.gen_range(-1.0..1.0);
        }
        val[l.s()] = rng.gen_range(-0.3..0.3);
        let mut dx: Vec<Vec<f64>> = (0..d).map(|_| (0..l.n()).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let div_rest: f64 = (1..d).map(|j| dx[j][l.h(j)]).sum();
        dx[0][l.h(0)] = -div_rest;
        let r = symmetric_time_derivative(&val, &dx, &model, d)
            .and_then(|dt| conservative_residual_rel(&RelJet { d, val, dt, dx }, &model));
        match r {
            Ok(r) => worst = worst.max(r.conservative_relative()),
            Err(e) => return Verdict::new(name, false, format!("jet {trial}: {e}"), &[]),
        }
    }
    Verdict::new(
        name,
        worst < 1e-10,
        format!("{jets} jets, max relative conservative residual {worst:.2e}"),
        &[("max_relative_residual", worst)],
    )
}

/// Good-unknown identity residual on three refinements; passes when every
/// observed order is at least three.
pub fn alinhac_convergence(levels: &[(usize, usize)]) -> Verdict {
    let name = "good-unknown identity";
    Verdict::from_result(name, (|| {
        let mut res = Vec::new();
        for &(n1, nt) in levels {
            res.push(alinhac_residual(&alinhac_fixture(Grid::new(2, n1, nt, 4.0)?), true)?);
        }
        let orders: Vec<f64> = res.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
        let min = orders.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(Verdict::new(
            name,
            min >= 3.0,
            format!("residuals {}, observed orders {}", sci(&res), fixed(&orders, 2)),
            &[("min_order", min), ("finest_residual", *res.last().unwrap_or(&f64::NAN))],
        ))
    })())
}

fn sine_scenario(n1: usize, nt: usize) -> FbResult<InitialData> {
    scenario("sine-interface", Grid::new(2, n1, nt, 4.0)?, slab_model())
}

/// Largest constraint violation along a march of `t_end` with steps at
/// `cfl_fraction` of the stable limit.
fn march_constraints(s: &InitialData, t_end: f64) -> FbResult<f64> {
    let pb = &s.problem;
    let probe = nonlinear_march(pb, &s.u0, &s.phi0, &MarchConfig { check_cfl: false, ..MarchConfig::new(1.0, 0) }, None)?;
    let steps = (t_end / (0.5 * probe.dt_limit)).ceil() as usize;
    let m = nonlinear_march(pb, &s.u0, &s.phi0, &MarchConfig::new(t_end / steps as f64, steps), None)?;
    Ok(m.samples.iter().map(|x| x.h_normal.max(x.div_h)).fold(0.0, f64::max))
}

/// Growth of `max(|div H|, |H_N|)` along the nonlinear march from
/// constraint-free data, on a grid pair.
pub fn constraint_propagation(coarse: (usize, usize), t_end: f64) -> Verdict {
    let name = "constraint propagation";
    Verdict::from_result(name, (|| {
        let fine = (2 * coarse.0 - 1, 2 * coarse.1);
        let e0 = march_constraints(&sine_scenario(coarse.0, coarse.1)?, t_end)?;
        let e1 = march_constraints(&sine_scenario(fine.0, fine.1)?, t_end)?;
        let order = (e0 / e1).log2();
        Ok(Verdict::new(
            name,
            order >= 1.5,
            format!("max violation {e0:.3e} -> {e1:.3e}, observed order {order:.2}"),
            &[("coarse", e0), ("fine", e1), ("order", order)],
        ))
    })())
}

fn linear_levels(basic: &AnalyticBasic, t_end: f64) -> FbResult<(usize, f64)> {
    let lim = dt_limit(basic, 0.0, 0.4)?.min(dt_limit(basic, t_end, 0.4)?);
    let steps = (t_end / lim).ceil() as usize;
    Ok((steps + 1, t_end / steps as f64))
}

fn slab(n1: usize, nt: usize) -> FbResult<AnalyticBasic> {
    Ok(sheared_slab(Grid::new(2, n1, nt, 4.0)?, slab_model(), SlabParams::default()))
}

/// Zero data, superposition, manufactured-solution order and the energy
/// ratio `(|W| + |psi|) / |f~|` under refinement.
pub fn linear_solver_contract() -> Verdict {
    let name = "linear solver contract";
    Verdict::from_result(name, (|| {
        let cfg = SolverConfig::default();
        let b = slab(33, 16)?;
        let (nt, dt) = linear_levels(&b, 0.5)?;
        let zf = StField::zeros(b.grid, nt, dt, 6, false);
        let zg = StField::zeros(b.grid, nt, dt, 2, true);
        let z = solve_effective(&b, &zf, &zg, &cfg)?;
        let zero = z.w.max_abs().max(z.psi.max_abs());

        let (v1, p1) = manufactured_pair(2, 4.0, 1.0);
        let m1 = manufacture(&b, nt, dt, &v1, &p1)?;
        let v2: FieldFn =
            Arc::new(|t, x| (0..6).map(|c| onset(t, 0.3) * (x[0] * (c as f64 + 1.0)).sin() * (-x[0]).exp()).collect());
        let p2: FrontFn = Arc::new(|t, x| onset(t, 0.3) * (TAU * x[0]).sin());
        let m2 = manufacture(&b, nt, dt, &v2, &p2)?;
        let (a, c) = (0.7, -1.3);
        let mut f = m1.f.scaled(a);
        f.axpy(c, &m2.f);
        let mut g = m1.g.scaled(a);
        g.axpy(c, &m2.g);
        let r1 = solve_effective(&b, &m1.f, &m1.g, &cfg)?;
        let r2 = solve_effective(&b, &m2.f, &m2.g, &cfg)?;
        let r = solve_effective(&b, &f, &g, &cfg)?;
        let mut comb = r1.v_dot.scaled(a);
        comb.axpy(c, &r2.v_dot);
        comb.axpy(-1.0, &r.v_dot);
        let superposition = comb.max_abs() / r.v_dot.max_abs().max(1.0);

        let mut errs = Vec::new();
        let mut ratios = Vec::new();
        for (n1, ntan) in [(33, 16), (65, 32)] {
            let b = slab(n1, ntan)?;
            let (nt, dt) = linear_levels(&b, 0.6)?;
            let (v, p) = manufactured_pair(2, 4.0, 0.1);
            let m = manufacture(&b, nt, dt, &v, &p)?;
            let r = solve_effective(&b, &m.f, &m.g, &cfg)?;
            let mut e = r.v_dot.clone();
            e.axpy(-1.0, &m.v_dot);
            errs.push(e.l2() / m.v_dot.l2());
            ratios.push((r.w.l2() + r.psi.l2()) / r.f_tilde.l2());
            if !energy_ledger(&r).boundary_term_nonnegative {
                return Err(FbError::BasicStateViolation("negative boundary energy".into()));
            }
        }
        let order = (errs[0] / errs[1]).log2();
        let variation = ratios[0].max(ratios[1]) / ratios[0].min(ratios[1]);
        let pass = zero == 0.0 && superposition <= 1e-11 && order >= 1.5 && variation < 2.0;
        Ok(Verdict::new(
            name,
            pass,
            format!(
                "zero-data max {zero:.1e}, superposition {superposition:.1e}, MMS errors {} (order {order:.2}), energy ratios {} (variation {variation:.3})",
                sci(&errs),
                fixed(&ratios, 3)
            ),
            &[("zero", zero), ("superposition", superposition), ("mms_order", order), ("ratio_variation", variation)],
        ))
    })())
}

/// `tau(t) b(x1) sin(2 pi k x2)` on `n_time` levels over `[0, 1]`.
fn smoothing_profile(g: Grid, n_time: usize, k: f64, b: impl Fn(f64) -> f64) -> StField {
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

/// Measured constants of the smoothing inequalities over a fixture family,
/// exact recovery once the cutoff passes the whole grid spectrum, and `L^2`
/// contraction on random fields.
pub fn smoothing_operators(seed: u64, thetas: &[f64]) -> Verdict {
    let name = "smoothing operators";
    Verdict::from_result(name, (|| {
        let g = Grid::new(2, 33, 16, 4.0)?;
        let bump = |x: f64| smooth_step(x - 0.5)[0] * (1.0 - smooth_step(x - 2.0)[0]);
        let family = [
            smoothing_profile(g, 17, 1.0, bump),
            smoothing_profile(g, 17, 2.0, bump),
            smoothing_profile(g, 17, 1.0, |x| (-(x - 1.0) * (x - 1.0)).exp() * (1.0 - smooth_step(x - 2.5)[0])),
        ];
        let pairs = [(0, 2), (1, 1), (2, 1), (1, 3)];
        let mut c_max = 0.0f64;
        let mut bounded = true;
        for u in &family {
            let r = smoothing_inequalities_report(u, thetas, &pairs)?;
            bounded &= r.bounded();
            for row in r.p1a.iter().chain(&r.p1b).chain(&r.p1c) {
                c_max = c_max.max(row.c_max);
            }
        }
        // the largest radial frequency of the extended grid
        let nyq = |h: f64| 0.5 / h;
        let full = 2.0 * (nyq(family[0].dt).powi(2) + nyq(g.h1()).powi(2) + nyq(g.ht()).powi(2)).sqrt();
        let mut recovery = 0.0f64;
        for u in &family {
            let mut e = smooth(u, full);
            e.axpy(-1.0, u);
            recovery = recovery.max(e.max_abs() / u.max_abs());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut contraction = 0.0f64;
        for _ in 0..20 {
            let mut u = StField::zeros(g, 9, 0.125, 1, false);
            u.data.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
            let theta = rng.gen_range(0.5..40.0);
            contraction = contraction.max(smooth(&u, theta).l2() / u.l2());
        }
        let pass = bounded && recovery < 1e-12 && contraction <= 1.0 + 1e-12;
        Ok(Verdict::new(
            name,
            pass,
            format!(
                "constants bounded: {bounded} (max {c_max:.3}), full-spectrum recovery error {recovery:.1e}, max L2 ratio {contraction:.6}"
            ),
            &[("max_constant", c_max), ("recovery_error", recovery), ("max_l2_ratio", contraction)],
        ))
    })())
}

/// `1/3 <= theta_k Delta_k <= 1/2` for `k <= k_max`, exactly in integers for
/// integer `theta0^2`, plus the floating-point schedule.
pub fn schedule_bounds(k_max: u64) -> Verdict {
    let name = "theta schedule";
    let squares = [1u64, 2, 16, 100, 4096];
    let exact = squares.iter().all(|&s| theta_bounds_exact(s, k_max));
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for s in squares {
        for (t, dl) in theta_schedule((s as f64).sqrt(), k_max.min(100_000) as usize) {
            lo = lo.min(t * dl);
            hi = hi.max(t * dl);
        }
    }
    let pass = exact && lo >= 1.0 / 3.0 - 1e-12 && hi <= 0.5 + 1e-12;
    Verdict::new(
        name,
        pass,
        format!("integer check for theta0^2 in {squares:?} up to k = {k_max}: {exact}; floating range [{lo:.6}, {hi:.6}]"),
        &[("min_product", lo), ("max_product", hi)],
    )
}

fn approx_for(s: &InitialData, t_end: f64) -> FbResult<ApproximateSolution> {
    let tr = compatibility_traces(&s.problem, &s.u0, &s.phi0, 3)?;
    let nt = suggested_levels(&s.problem, &s.u0, &s.phi0, t_end, 0.4, 0.8)?;
    build_approximate(&s.problem, &tr, t_end, nt)
}

fn weighted_l2(g: &Grid, a: &[f64], b: &[f64], n: usize) -> f64 {
    (0..g.np())
        .map(|p| g.weight(p) * (0..n).map(|c| (a[p * n + c] - b[p * n + c]).powi(2)).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Every other point of `fine` in each direction.
fn restrict(fine: &Grid, coarse: &Grid, f: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; coarse.np() * n];
    for i1 in 0..coarse.n1 {
        for jt in 0..coarse.ntan() {
            let fp = 2 * i1 * fine.ntan() + 2 * jt;
            let cp = i1 * coarse.ntan() + jt;
            out[cp * n..(cp + 1) * n].copy_from_slice(&f[fp * n..(fp + 1) * n]);
        }
    }
    out
}

/// `(U(T)` of the Nash-Moser limit, `U(T)` of the march`)` on one grid.
fn final_states(s: &InitialData, t_end: f64, levels: Option<usize>, cfg: &NmConfig) -> FbResult<(Vec<f64>, Vec<f64>, usize)> {
    let pb = &s.problem;
    let tr = compatibility_traces(pb, &s.u0, &s.phi0, 3)?;
    let nt = match levels {
        Some(n) => n,
        None => suggested_levels(pb, &s.u0, &s.phi0, t_end, 0.4, 0.8)?,
    };
    let ap = build_approximate(pb, &tr, t_end, nt)?;
    let run = run_nash_moser(pb, &ap, cfg);
    if let Some((_, e)) = run.failure {
        return Err(e);
    }
    let mut u = ap.u.clone();
    u.axpy(1.0, &run.state.v);
    let m = nonlinear_march(pb, &s.u0, &s.phi0, &MarchConfig::new(ap.u.dt, nt - 1), None)?;
    Ok((u.level(nt - 1).to_vec(), m.u.level(nt - 1).to_vec(), nt))
}

/// Outcome of the three Nash-Moser sanity checks, kept separate so the
/// caller can print them.
#[derive(Clone, Debug, Serialize)]
pub struct NashMoserSanity {
    pub fixpoint_exact: bool,
    pub monotone_after_two: bool,
    pub worst_telescoping: f64,
    pub top_rung: Vec<f64>,
    pub cross_difference: f64,
    pub nm_error: f64,
    pub march_error: f64,
}

/// Zero-forcing fixpoint, monotone decay and telescoping on
/// `sine-interface` at `(n1, ntan)`, and agreement of the Nash-Moser limit
/// with the march at half that resolution, within the sum of both schemes'
/// discretization errors measured against the full resolution.
pub fn nash_moser_sanity(n1: usize, ntan: usize, t_end: f64, theta0: f64) -> Verdict {
    let name = "nash-moser sanity";
    let r = (|| -> FbResult<NashMoserSanity> {
        let s = sine_scenario(n1, ntan)?;
        let mut ap = approx_for(&s, t_end)?;
        let cfg = NmConfig { theta0, n_max: 20, tol: 0.0, ..Default::default() };
        let run = run_nash_moser(&s.problem, &ap, &cfg);
        if let Some((_, e)) = run.failure {
            return Err(e);
        }
        let rep = convergence_report(&run.records, cfg.alpha, None);
        let worst_telescoping = run.records.iter().map(|r| r.telescoping[0].max(r.telescoping[1])).fold(0.0, f64::max);
        let top_rung: Vec<f64> = run.records.iter().map(|r| *r.delta_norms.last().unwrap()).collect();

        ap.f = StField::like(&ap.f, ap.f.nc);
        let zero = run_nash_moser(&s.problem, &ap, &cfg);
        let fixpoint_exact = zero.failure.is_none()
            && zero.records.len() == 20
            && zero.state.v.max_abs() == 0.0
            && zero.state.psi.max_abs() == 0.0;

        let cross = NmConfig { theta0: 256.0, n_max: 12, ..Default::default() };
        let coarse = sine_scenario((n1 + 1) / 2, ntan / 2)?;
        let (nm_c, mar_c, nt_c) = final_states(&coarse, t_end, None, &cross)?;
        let (nm_f, mar_f, _) = final_states(&s, t_end, Some(2 * nt_c - 1), &cross)?;
        let (gc, gf) = (coarse.problem.grid, s.problem.grid);
        let n = s.problem.n();
        Ok(NashMoserSanity {
            fixpoint_exact,
            monotone_after_two: rep.monotone_after_two,
            worst_telescoping,
            top_rung,
            cross_difference: weighted_l2(&gc, &nm_c, &mar_c, n),
            nm_error: weighted_l2(&gc, &nm_c, &restrict(&gf, &gc, &nm_f, n), n),
            march_error: weighted_l2(&gc, &mar_c, &restrict(&gf, &gc, &mar_f, n), n),
        })
    })();
    match r {
        Ok(x) => {
            let agree = x.cross_difference <= x.nm_error + x.march_error;
            let pass = x.fixpoint_exact && x.monotone_after_two && x.worst_telescoping <= 1e-9 && agree;
            Verdict::new(
                name,
                pass,
                format!(
                    "fixpoint exact: {}; top rung monotone after step 2: {} ({:.3e} -> {:.3e}); max telescoping defect {:.1e}; limit vs march {:.3e} <= {:.3e} + {:.3e}: {agree}",
                    x.fixpoint_exact,
                    x.monotone_after_two,
                    x.top_rung.first().copied().unwrap_or(0.0),
                    x.top_rung.last().copied().unwrap_or(0.0),
                    x.worst_telescoping,
                    x.cross_difference,
                    x.nm_error,
                    x.march_error
                ),
                &[
                    ("worst_telescoping", x.worst_telescoping),
                    ("cross_difference", x.cross_difference),
                    ("nm_error", x.nm_error),
                    ("march_error", x.march_error),
                ],
            )
        }
        Err(e) => Verdict::new(name, false, format!("error: {e}"), &[]),
    }
}

/// First front trace against its direct formula, second traces against a
/// refined time march, and detection of a boundary pressure offset.
pub fn compatibility_machinery() -> Verdict {
    let name = "compatibility machinery";
    Verdict::from_result(name, (|| {
        let s = scenario("rel-boost", Grid::new(3, 17, 8, 4.0)?, slab_model())?;
        let g = s.problem.grid;
        let n = s.problem.n();
        let l = Layout::new(3);
        let tr = compatibility_traces(&s.problem, &s.u0, &s.phi0, 1)?;
        let dphi: Vec<Vec<f64>> = (0..2).map(|i| g.dtan_boundary(&s.phi0, 1, i)).collect();
        let mut phi1 = 0.0f64;
        for jt in 0..g.ntan() {
            let b = &s.u0[jt * n..(jt + 1) * n];
            let direct = b[l.v(0)] - dphi[0][jt] * b[l.v(1)] - dphi[1][jt] * b[l.v(2)];
            phi1 = phi1.max((tr.phi[1][jt] - direct).abs());
        }

        let s = sine_scenario(17, 8)?;
        let tr = compatibility_traces(&s.problem, &s.u0, &s.phi0, 2)?;
        let dts = [0.02, 0.01, 0.005];
        let mut errs = Vec::new();
        for &dt in &dts {
            let (u2, p2) = marched_second_derivative(&s.problem, &s.u0, &s.phi0, dt)?;
            let eu = u2.iter().zip(&tr.u[2]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let ep = p2.iter().zip(&tr.phi[2]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            errs.push(eu.max(ep));
        }
        let order = fit_order(&dts, &errs);

        let mut bad = s.clone();
        for jt in 0..g.ntan().min(bad.problem.grid.ntan()) {
            bad.u0[jt * bad.problem.n()] += 1e-3;
        }
        let trb = compatibility_traces(&bad.problem, &bad.u0, &bad.phi0, 2)?;
        let flagged = check_compatibility(&trb, 2).first_failure == Some(0);
        let good = check_compatibility(&tr, 1).pass;
        let pass = phi1 < 1e-12 && order >= 1.9 && flagged && good;
        Ok(Verdict::new(
            name,
            pass,
            format!(
                "first front trace vs direct formula {phi1:.1e}; second trace vs march errors {} (order {order:.2}); offset data flagged at order 0: {flagged}",
                sci(&errs)
            ),
            &[("phi1_mismatch", phi1), ("trace_order", order)],
        ))
    })())
}
