use serde::Serialize;

use super::approx::{margins, transport_magnetic, ApproximateSolution, Margins};
use super::{boundary_constraint_residuals, Problem};
use crate::aniso::{aniso_ladder, lift_from_boundary, smooth};
use crate::error::{FbError, FbResult};
use crate::grid::StField;
use crate::linear::{from_good_unknown, solve_effective, CoeffSlice, LevelBasic, SolverConfig};
use crate::state::{Layout, M8, V8};

fn v8(s: &[f64]) -> V8 {
    let mut v = V8::zeros();
    for (k, x) in s.iter().enumerate() {
        v[k] = *x;
    }
    v
}

/// Discrete `L(U, Phi) U` on every level of a level basic state.
pub fn interior_residual(basic: &LevelBasic) -> FbResult<StField> {
    let u = &basic.u;
    let mut out = StField::like(u, u.nc);
    for k in 0..u.n_time {
        let s = CoeffSlice::new(basic, u.time(k), false)?;
        out.level_mut(k).copy_from_slice(&s.interior_operator());
    }
    Ok(out)
}

/// Discrete `B(U, phi) = (D_t phi - v . N, q)` on the boundary.
pub fn boundary_residual(basic: &LevelBasic) -> StField {
    let u = &basic.u;
    let g = u.grid;
    let d = g.d;
    let n = u.nc;
    let l = Layout::new(d);
    let ntan = g.ntan();
    let mut out = StField::zeros(g, u.n_time, u.dt, 2, true);
    for k in 0..u.n_time {
        let dphi: Vec<Vec<f64>> = (0..d - 1).map(|i| g.dtan_boundary(basic.phi.level(k), 1, i)).collect();
        let lvl = u.level(k);
        let o = out.level_mut(k);
        for jt in 0..ntan {
            let b = &lvl[jt * n..(jt + 1) * n];
            let mut vn = b[l.v(0)];
            for i in 0..d - 1 {
                vn -= dphi[i][jt] * b[l.v(1 + i)];
            }
            o[2 * jt] = basic.dt_phi[k * ntan + jt] - vn;
            o[2 * jt + 1] = b[0];
        }
    }
    out
}

/// Directional derivative of [`interior_residual`] at `basic` along
/// `(v, psi)`: `L'_e V - (A_0 Psi_t + A~_1 Psi_1 + A_i Psi_i) D_1 U / d1 Phi`
/// with `Psi = chi psi`. Exact for the discrete operator.
pub fn interior_derivative(basic: &LevelBasic, v: &StField, psi: &StField) -> FbResult<StField> {
    let g = v.grid;
    let d = g.d;
    let n = v.nc;
    let ntan = g.ntan();
    let dtv = v.dt_bounded();
    let dtpsi = psi.dt_bounded();
    let len = v.level_len();
    let mut out = StField::like(v, n);
    for k in 0..v.n_time {
        let s = CoeffSlice::new(basic, v.time(k), false)?;
        let mut lv = s.apply_linearized(v.level(k), &dtv[k * len..(k + 1) * len]);
        let ps = psi.level(k);
        let dps: Vec<Vec<f64>> = (0..d - 1).map(|i| g.dtan_boundary(ps, 1, i)).collect();
        let chi = &s.lifting.chi;
        for p in 0..g.np() {
            let (i1, jt) = (p / ntan, p % ntan);
            if chi[i1][0] == 0.0 && chi[i1][1] == 0.0 {
                continue;
            }
            let pc = &s.pts[p];
            let mut m: M8 = pc.a[0] * (chi[i1][0] * dtpsi[k * ntan + jt]) + pc.a[1] * (chi[i1][1] * ps[jt]);
            for i in 0..d - 1 {
                m += pc.a[2 + i] * (chi[i1][0] * dps[i][jt]);
            }
            let corr = m * v8(&s.du1[p * n..(p + 1) * n]) / s.lifting.d1(p);
            for c in 0..n {
                lv[p * n + c] -= corr[c];
            }
        }
        out.level_mut(k).copy_from_slice(&lv);
    }
    Ok(out)
}

/// Directional derivative of [`boundary_residual`]:
/// `(D_t psi + v' . D psi - V . N, V_q)`.
pub fn boundary_derivative(basic: &LevelBasic, v: &StField, psi: &StField) -> StField {
    let g = v.grid;
    let d = g.d;
    let n = v.nc;
    let l = Layout::new(d);
    let ntan = g.ntan();
    let dtpsi = psi.dt_bounded();
    let mut out = StField::zeros(g, v.n_time, v.dt, 2, true);
    for k in 0..v.n_time {
        let dphi: Vec<Vec<f64>> = (0..d - 1).map(|i| g.dtan_boundary(basic.phi.level(k), 1, i)).collect();
        let dps: Vec<Vec<f64>> = (0..d - 1).map(|i| g.dtan_boundary(psi.level(k), 1, i)).collect();
        let ub = basic.u.level(k);
        let vl = v.level(k);
        let o = out.level_mut(k);
        for jt in 0..ntan {
            let (b, w) = (&ub[jt * n..(jt + 1) * n], &vl[jt * n..(jt + 1) * n]);
            let mut acc = dtpsi[k * ntan + jt] - w[l.v(0)];
            for i in 0..d - 1 {
                acc += b[l.v(1 + i)] * dps[i][jt] + w[l.v(1 + i)] * dphi[i][jt];
            }
            o[2 * jt] = acc;
            o[2 * jt + 1] = w[0];
        }
    }
    out
}

/// `(Psi / d1 Phi) D_1 L(U, Phi)`, the zero-order term the effective operator drops.
fn dropped_term(basic: &LevelBasic, interior: &StField, psi: &StField) -> FbResult<StField> {
    let g = interior.grid;
    let n = interior.nc;
    let ntan = g.ntan();
    let mut out = StField::like(interior, n);
    for k in 0..interior.n_time {
        let s = CoeffSlice::new(basic, interior.time(k), false)?;
        let d1 = g.d1(interior.level(k), n);
        let ps = psi.level(k);
        let o = out.level_mut(k);
        for p in 0..g.np() {
            let big = s.lifting.chi[p / ntan][0] * ps[p % ntan] / s.lifting.d1(p);
            for c in 0..n {
                o[p * n + c] = big * d1[p * n + c];
            }
        }
    }
    Ok(out)
}

fn effective_apply(basic: &LevelBasic, v_dot: &StField) -> FbResult<StField> {
    let dtv = v_dot.dt_bounded();
    let len = v_dot.level_len();
    let mut out = StField::like(v_dot, v_dot.nc);
    for k in 0..v_dot.n_time {
        let s = CoeffSlice::new(basic, v_dot.time(k), false)?;
        out.level_mut(k).copy_from_slice(&s.apply_linearized(v_dot.level(k), &dtv[k * len..(k + 1) * len]));
    }
    Ok(out)
}

fn sum(a: &StField, b: &StField) -> StField {
    let mut o = a.clone();
    o.axpy(1.0, b);
    o
}

fn diff(a: &StField, b: &StField) -> StField {
    let mut o = a.clone();
    o.axpy(-1.0, b);
    o
}

fn max_diff(a: &StField, b: &StField) -> f64 {
    a.data.iter().zip(&b.data).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// `theta_n = sqrt(theta0^2 + n)` and `Delta_n = theta_{n+1} - theta_n` for `n < n_max`.
pub fn theta_schedule(theta0: f64, n_max: usize) -> Vec<(f64, f64)> {
    let th = |n: usize| (theta0 * theta0 + n as f64).sqrt();
    (0..n_max).map(|n| (th(n), th(n + 1) - th(n))).collect()
}

/// Exact check of `1/3 <= theta_k Delta_k <= 1/2` for `k <= k_max` with
/// `theta0^2` a positive integer. Since `theta_{k+1}^2 - theta_k^2 = 1`,
/// `theta_k Delta_k = theta_k / (theta_k + theta_{k+1})`, so the upper bound
/// is `theta_k <= theta_{k+1}` and the lower bound is `theta_{k+1} <= 2 theta_k`,
/// i.e. `theta0^2 + k + 1 <= 4 (theta0^2 + k)`, checked in integers.
pub fn theta_bounds_exact(theta0_sq: u64, k_max: u64) -> bool {
    if theta0_sq == 0 {
        return false;
    }
    (0..=k_max).all(|k| {
        let a = theta0_sq as u128 + k as u128;
        a + 1 <= 4 * a
    })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct NmConfig {
    pub theta0: f64,
    pub alpha: f64,
    pub n_max: usize,
    /// Stop once the top rung of the increment ladder falls below this.
    pub tol: f64,
    /// Smallness parameter the measured one is compared with.
    pub eps_nm: f64,
    /// Highest anisotropic order measured.
    pub ladder_order: usize,
    /// Evaluate the analytic split of the error terms each step.
    pub splits: bool,
    pub solver: SolverConfig,
}

impl Default for NmConfig {
    fn default() -> Self {
        NmConfig {
            theta0: 4.0,
            alpha: 12.0,
            n_max: 20,
            tol: 1e-10,
            eps_nm: 1.0,
            ladder_order: 6,
            splits: false,
            solver: SolverConfig::default(),
        }
    }
}

/// Basic state of one step: the smoothed iterate, corrected so the
/// boundary constraints of the linearization hold.
#[derive(Clone, Debug)]
pub struct ModifiedState {
    pub v: StField,
    pub psi: StField,
    pub basic: LevelBasic,
    pub margins: Margins,
    /// `max |D_t phi - v . N|` of the corrected state.
    pub kinematic_residual: f64,
    /// `max |H_N|` after projection and before it.
    pub h_normal: f64,
    pub h_normal_drift: f64,
}

/// `psi_half = S psi`, `V_half = S V` with `v_1` corrected by the `chi`-lift
/// so that `D_t(phi^a + psi_half) = (v^a + v_half) . N` on the boundary, and
/// `H` replaced by the transport of `H^a(0)` with the new velocity and front.
pub fn modified_state(
    pb: &Problem,
    approx: &ApproximateSolution,
    v: &StField,
    psi: &StField,
    theta: f64,
) -> FbResult<ModifiedState> {
    let g = pb.grid;
    let d = g.d;
    let n = pb.n();
    let l = Layout::new(d);
    let ntan = g.ntan();
    let chi = pb.chi();
    let mut sv = smooth(v, theta);
    let sp = smooth(psi, theta);
    let dt_sp = sp.dt_bounded();
    for k in 0..sv.n_time {
        let dsp: Vec<Vec<f64>> = (0..d - 1).map(|i| g.dtan_boundary(sp.level(k), 1, i)).collect();
        let dpa: Vec<Vec<f64>> = (0..d - 1).map(|i| g.dtan_boundary(approx.phi.level(k), 1, i)).collect();
        let ua = approx.u.level(k);
        let lvl = sv.level_mut(k);
        let shift: Vec<f64> = (0..ntan)
            .map(|jt| {
                let mut w = dt_sp[k * ntan + jt];
                for i in 0..d - 1 {
                    let vi = lvl[jt * n + l.v(1 + i)];
                    w += (ua[jt * n + l.v(1 + i)] + vi) * dsp[i][jt] + vi * dpa[i][jt];
                }
                w - lvl[jt * n + l.v(0)]
            })
            .collect();
        for i1 in 0..g.n1 {
            let c = chi[i1][0];
            if c == 0.0 {
                continue;
            }
            for jt in 0..ntan {
                lvl[(i1 * ntan + jt) * n + l.v(0)] += c * shift[jt];
            }
        }
    }
    let u_tot = sum(&approx.u, &sv);
    let phi_tot = sum(&approx.phi, &sp);
    let (u_tot, drift) = transport_magnetic(pb, &u_tot, &phi_tot).map_err(margin_error)?;
    for (o, (a, t)) in sv.data.chunks_mut(n).zip(approx.u.data.chunks(n).zip(u_tot.data.chunks(n))) {
        for i in 0..d {
            o[l.h(i)] = t[l.h(i)] - a[l.h(i)];
        }
    }
    let m = margins(pb, &u_tot, &phi_tot).map_err(margin_error)?;
    if m.min_d1_phi < 0.5 {
        return Err(FbError::MarginLost(format!("modified state: d1 Phi = {:.4} < 1/2", m.min_d1_phi)));
    }
    if m.min_dq1 < 0.5 * pb.kappa0 {
        return Err(FbError::MarginLost(format!(
            "modified state: d1 q = {:.4} < kappa0 / 2 = {:.4}",
            m.min_dq1,
            0.5 * pb.kappa0
        )));
    }
    let (kin, hn) = boundary_constraint_residuals(&u_tot, &phi_tot);
    Ok(ModifiedState {
        v: sv,
        psi: sp,
        basic: pb.level_basic(u_tot, phi_tot),
        margins: m,
        kinematic_residual: kin,
        h_normal: hn,
        h_normal_drift: drift,
    })
}

fn margin_error(e: FbError) -> FbError {
    match e {
        FbError::AdmissibilityViolation { quantity, value, lo, hi } => {
            FbError::MarginLost(format!("modified state: {quantity} = {value} outside ({lo}, {hi})"))
        }
        other => other,
    }
}

/// Running data of the iteration.
#[derive(Clone, Debug)]
pub struct NmState {
    pub n: usize,
    pub v: StField,
    pub psi: StField,
    /// `F_{n-1} = sum f_k` and `G_{n-1}`.
    pub sum_f: StField,
    pub sum_g: StField,
    /// `E_n = sum_{k<n} e_k` and `E~_n`.
    pub acc_e: StField,
    pub acc_e_tilde: StField,
    /// `L(V_n)` and `B(V_n)` of the reformulated problem.
    pub cur_l: StField,
    pub cur_b: StField,
    growth: usize,
    last_norm: Option<f64>,
}

impl NmState {
    pub fn new(approx: &ApproximateSolution) -> Self {
        let v = StField::like(&approx.u, approx.u.nc);
        let psi = StField::like(&approx.phi, 1);
        let b = StField::like(&approx.boundary, 2);
        NmState {
            n: 0,
            sum_f: v.clone(),
            acc_e: v.clone(),
            cur_l: v.clone(),
            v,
            psi,
            sum_g: b.clone(),
            acc_e_tilde: b.clone(),
            cur_b: b,
            growth: 0,
            last_norm: None,
        }
    }
}

/// L2 norms of the pieces of `e_n` and `e~_n`.
#[derive(Clone, Debug, Serialize)]
pub struct SplitReport {
    /// `e'`, `e''`, `e'''`, `D dPsi`, the Alinhac defect
    /// `L'(U_half) delta - D dPsi - L'_e dV_dot`, and the solver residual
    /// `L'_e dV_dot - f_n`.
    pub interior: [f64; 6],
    /// `e~'`, `e~''`, `e~'''` and the boundary solver residual.
    pub boundary: [f64; 4],
    /// `max |e_n - sum of parts|` and the same for `e~_n`.
    pub mismatch: [f64; 2],
}

#[derive(Clone, Debug, Serialize)]
pub struct IterationRecord {
    pub n: usize,
    pub theta: f64,
    pub delta: f64,
    /// `||(dV_n, chi dpsi_n)||_{s,*}` for `s = 0..=ladder_order`.
    pub delta_norms: Vec<f64>,
    pub f_norm: f64,
    pub g_norm: f64,
    pub e_norm: f64,
    pub e_tilde_norm: f64,
    /// `||E_{n+1}||`, `||E~_{n+1}||`.
    pub acc_e_norm: f64,
    pub acc_e_tilde_norm: f64,
    /// Largest deviation from the two telescoped identities.
    pub telescoping: [f64; 2],
    /// `||L(V_{n+1}) - f^a||` and `||B(V_{n+1})||`: distance to a solution.
    pub residual: f64,
    pub boundary_residual: f64,
    pub kinematic_residual: f64,
    pub h_normal: f64,
    pub h_normal_drift: f64,
    pub solver_bc_residual: f64,
    pub splits: Option<SplitReport>,
}

struct Residuals {
    interior: StField,
    boundary: StField,
}

fn reformulated(pb: &Problem, approx: &ApproximateSolution, v: &StField, psi: &StField) -> FbResult<Residuals> {
    let basic = pb.level_basic(sum(&approx.u, v), sum(&approx.phi, psi));
    let mut interior = diff(&interior_residual(&basic)?, &approx.interior);
    approx.close(&mut interior);
    Ok(Residuals { interior, boundary: diff(&boundary_residual(&basic), &approx.boundary) })
}

fn gauss5() -> [(f64, f64); 5] {
    let a = (5.0 - 2.0 * (10.0f64 / 7.0).sqrt()).sqrt() / 3.0;
    let b = (5.0 + 2.0 * (10.0f64 / 7.0).sqrt()).sqrt() / 3.0;
    let wa = (322.0 + 13.0 * 70.0f64.sqrt()) / 900.0;
    let wb = (322.0 - 13.0 * 70.0f64.sqrt()) / 900.0;
    let w0 = 128.0 / 225.0;
    [(0.5 * (1.0 - b), 0.5 * wb), (0.5 * (1.0 - a), 0.5 * wa), (0.5, 0.5 * w0), (0.5 * (1.0 + a), 0.5 * wa), (0.5 * (1.0 + b), 0.5 * wb)]
}

#[allow(clippy::too_many_arguments)]
fn split_report(
    pb: &Problem,
    approx: &ApproximateSolution,
    state: &NmState,
    theta: f64,
    dv: &StField,
    dpsi: &StField,
    dv_dot: &StField,
    ms: &ModifiedState,
    f_n: &StField,
    g_n: &StField,
    e_n: &StField,
    et_n: &StField,
) -> FbResult<SplitReport> {
    let basic_at = |v: &StField, psi: &StField| pb.level_basic(sum(&approx.u, v), sum(&approx.phi, psi));
    let lin = |b: &LevelBasic| -> FbResult<StField> {
        let mut r = interior_derivative(b, dv, dpsi)?;
        approx.close(&mut r);
        Ok(r)
    };
    let blin = |b: &LevelBasic| boundary_derivative(b, dv, dpsi);
    let basic_n = basic_at(&state.v, &state.psi);
    let (lin_n, blin_n) = (lin(&basic_n)?, blin(&basic_n));
    let mut e1 = StField::like(dv, dv.nc);
    let mut b1 = StField::like(&blin_n, 2);
    for (tau, w) in gauss5() {
        let mut v = state.v.clone();
        v.axpy(tau, dv);
        let mut p = state.psi.clone();
        p.axpy(tau, dpsi);
        let b = basic_at(&v, &p);
        e1.axpy(w, &diff(&lin(&b)?, &lin_n));
        b1.axpy(w, &diff(&blin(&b), &blin_n));
    }
    let basic_s = basic_at(&smooth(&state.v, theta), &smooth(&state.psi, theta));
    let (lin_s, blin_s) = (lin(&basic_s)?, blin(&basic_s));
    let (lin_h, blin_h) = (lin(&ms.basic)?, blin(&ms.basic));
    let e2 = diff(&lin_n, &lin_s);
    let e3 = diff(&lin_s, &lin_h);
    let b2 = diff(&blin_n, &blin_s);
    let b3 = diff(&blin_s, &blin_h);
    let mut dterm = dropped_term(&ms.basic, &interior_residual(&ms.basic)?, dpsi)?;
    approx.close(&mut dterm);
    let mut le = effective_apply(&ms.basic, dv_dot)?;
    approx.close(&mut le);
    let alinhac = diff(&diff(&lin_h, &dterm), &le);
    let solver = diff(&le, f_n);
    let bsolver = diff(&blin_h, g_n);
    let total = [&e1, &e2, &e3, &dterm, &alinhac, &solver].iter().fold(StField::like(dv, dv.nc), |a, b| sum(&a, b));
    let btotal = [&b1, &b2, &b3, &bsolver].iter().fold(StField::like(&b1, 2), |a, b| sum(&a, b));
    Ok(SplitReport {
        interior: [e1.l2(), e2.l2(), e3.l2(), dterm.l2(), alinhac.l2(), solver.l2()],
        boundary: [b1.l2(), b2.l2(), b3.l2(), bsolver.l2()],
        mismatch: [max_diff(e_n, &total), max_diff(et_n, &btotal)],
    })
}

fn increment_ladder(dv: &StField, dpsi: &StField, approx: &ApproximateSolution, order: usize) -> FbResult<Vec<f64>> {
    let a = aniso_ladder(dv, order)?;
    let b = aniso_ladder(&lift_from_boundary(dpsi, &approx.basic.cutoff), order)?;
    Ok(a.iter().zip(&b).map(|(x, y)| x.hypot(*y)).collect())
}

/// One Nash-Moser step: sources from the accumulated errors, the modified
/// state, the effective linear solve, the increment through the good
/// unknown and the error terms as the defining differences.
pub fn iterate(state: &mut NmState, approx: &ApproximateSolution, pb: &Problem, cfg: &NmConfig) -> FbResult<IterationRecord> {
    let n = state.n;
    let (theta, delta) = theta_schedule(cfg.theta0, n + 1)[n];
    let close_smooth = |x: &StField| {
        let mut y = smooth(x, theta);
        approx.close(&mut y);
        y
    };
    let mut f_n = close_smooth(&diff(&approx.f, &state.acc_e));
    f_n.axpy(-1.0, &state.sum_f);
    let mut g_n = smooth(&state.acc_e_tilde, theta).scaled(-1.0);
    g_n.axpy(-1.0, &state.sum_g);

    let ms = modified_state(pb, approx, &state.v, &state.psi, theta)?;
    let sol = solve_effective(&ms.basic, &f_n, &g_n, &cfg.solver)?;
    let dv = from_good_unknown(&sol.v_dot, &sol.psi, &ms.basic)?;
    let dpsi = sol.psi.clone();
    let v_next = sum(&state.v, &dv);
    let psi_next = sum(&state.psi, &dpsi);
    let next = reformulated(pb, approx, &v_next, &psi_next)?;
    let e_n = diff(&diff(&next.interior, &state.cur_l), &f_n);
    let et_n = diff(&diff(&next.boundary, &state.cur_b), &g_n);

    // L(V_{n+1}) = S f^a + (I - S) E_n + e_n, B(V_{n+1}) = (I - S) E~_n + e~_n
    let mut rhs = close_smooth(&approx.f);
    rhs.axpy(1.0, &state.acc_e);
    rhs.axpy(-1.0, &close_smooth(&state.acc_e));
    rhs.axpy(1.0, &e_n);
    let mut brhs = diff(&state.acc_e_tilde, &smooth(&state.acc_e_tilde, theta));
    brhs.axpy(1.0, &et_n);
    let telescoping = [max_diff(&next.interior, &rhs), max_diff(&next.boundary, &brhs)];

    let splits = if cfg.splits {
        Some(split_report(pb, approx, state, theta, &dv, &dpsi, &sol.v_dot, &ms, &f_n, &g_n, &e_n, &et_n)?)
    } else {
        None
    };
    let delta_norms = increment_ladder(&dv, &dpsi, approx, cfg.ladder_order)?;

    state.sum_f.axpy(1.0, &f_n);
    state.sum_g.axpy(1.0, &g_n);
    state.acc_e.axpy(1.0, &e_n);
    state.acc_e_tilde.axpy(1.0, &et_n);
    state.v = v_next;
    state.psi = psi_next;
    let record = IterationRecord {
        n,
        theta,
        delta,
        f_norm: f_n.l2(),
        g_norm: g_n.l2(),
        e_norm: e_n.l2(),
        e_tilde_norm: et_n.l2(),
        acc_e_norm: state.acc_e.l2(),
        acc_e_tilde_norm: state.acc_e_tilde.l2(),
        telescoping,
        residual: diff(&next.interior, &approx.f).l2(),
        boundary_residual: next.boundary.l2(),
        kinematic_residual: ms.kinematic_residual,
        h_normal: ms.h_normal,
        h_normal_drift: ms.h_normal_drift,
        solver_bc_residual: sol.bc_residual,
        splits,
        delta_norms,
    };
    state.cur_l = next.interior;
    state.cur_b = next.boundary;
    state.n += 1;

    let top = *record.delta_norms.last().unwrap_or(&0.0);
    if !top.is_finite() {
        return Err(FbError::DivergenceDetected { step: n });
    }
    match state.last_norm {
        Some(prev) if top > prev => state.growth += 1,
        _ => state.growth = 0,
    }
    state.last_norm = Some(top);
    if state.growth >= 3 {
        return Err(FbError::DivergenceDetected { step: n });
    }
    Ok(record)
}

/// Records of a full run and how it ended.
#[derive(Clone, Debug)]
pub struct NmRun {
    pub records: Vec<IterationRecord>,
    pub state: NmState,
    pub converged: bool,
    /// Step at which an error stopped the run.
    pub failure: Option<(usize, FbError)>,
}

/// Iterates until the top increment norm drops below `cfg.tol`, `n_max`
/// steps were taken, or a step fails.
pub fn run_nash_moser(pb: &Problem, approx: &ApproximateSolution, cfg: &NmConfig) -> NmRun {
    let mut state = NmState::new(approx);
    let mut records = Vec::new();
    let mut converged = false;
    let mut failure = None;
    while state.n < cfg.n_max {
        let n = state.n;
        match iterate(&mut state, approx, pb, cfg) {
            Ok(r) => {
                let top = *r.delta_norms.last().unwrap_or(&0.0);
                records.push(r);
                if top < cfg.tol {
                    converged = true;
                    break;
                }
            }
            Err(e) => {
                failure = Some((n, e));
                break;
            }
        }
    }
    NmRun { records, state, converged, failure }
}

#[derive(Clone, Debug, Serialize)]
pub struct SlopeFit {
    pub s: usize,
    /// Least-squares slope of `log ||dV_n||_s` against `log theta_n`.
    pub slope: f64,
    /// `s - alpha - 1`.
    pub predicted: f64,
    /// `max_n ||dV_n||_s / (theta_n^{s - alpha - 1} Delta_n)`.
    pub eps_measured: f64,
    pub consistent: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceReport {
    pub steps: usize,
    /// Every increment vanished.
    pub degenerate: bool,
    pub fits: Vec<SlopeFit>,
    /// Top-rung increments never grow from step 2 on.
    pub monotone_after_two: bool,
    /// Relative change of `||E_n||` over the last step.
    pub e_last_change: f64,
    pub final_delta: f64,
    pub flagged_step: Option<usize>,
    pub pass: bool,
}

/// Decay rates of the increments against the schedule. A fit is
/// consistent when the measured decay is at least as fast as the
/// `s - alpha - 1` bound.
pub fn convergence_report(records: &[IterationRecord], alpha: f64, failed_at: Option<usize>) -> ConvergenceReport {
    let steps = records.len();
    let top = |r: &IterationRecord| *r.delta_norms.last().unwrap_or(&0.0);
    let degenerate = records.iter().all(|r| r.delta_norms.iter().all(|x| *x == 0.0));
    let orders = records.first().map_or(0, |r| r.delta_norms.len());
    let mut fits = Vec::new();
    if steps >= 3 && !degenerate {
        for s in 0..orders {
            let pts: Vec<(f64, f64)> = records
                .iter()
                .filter(|r| r.delta_norms[s] > 0.0)
                .map(|r| (r.theta.ln(), r.delta_norms[s].ln()))
                .collect();
            let predicted = s as f64 - alpha - 1.0;
            let slope = if pts.len() >= 2 {
                let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
                let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
                let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
                let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
                if sxx > 0.0 {
                    sxy / sxx
                } else {
                    f64::NAN
                }
            } else {
                f64::NEG_INFINITY
            };
            let eps_measured = records
                .iter()
                .map(|r| r.delta_norms[s] / (r.theta.powf(predicted) * r.delta))
                .fold(0.0, f64::max);
            fits.push(SlopeFit { s, slope, predicted, eps_measured, consistent: slope <= predicted });
        }
    }
    let monotone_after_two = records.windows(2).filter(|w| w[0].n >= 2).all(|w| top(&w[1]) <= top(&w[0]));
    let e_last_change = match records {
        [.., a, b] if b.acc_e_norm > 0.0 => (b.acc_e_norm - a.acc_e_norm).abs() / b.acc_e_norm,
        _ => 0.0,
    };
    ConvergenceReport {
        steps,
        degenerate,
        pass: failed_at.is_none() && (degenerate || (steps >= 3 && monotone_after_two)),
        fits,
        monotone_after_two,
        e_last_change,
        final_delta: records.last().map_or(0.0, top),
        flagged_step: failed_at,
    }
}
