use rayon::prelude::*;
use serde::Serialize;

use super::iteration::boundary_residual;
use super::traces::CompatibilityTraces;
use super::{boundary_constraint_residuals, project_normal_field, Problem, Track};
use crate::error::{FbError, FbResult};
use crate::grid::StField;
use crate::interface::{lift, rayleigh_taylor_margin, InterfaceState, Lifting};
use crate::linear::{dt_limit, CoeffSlice, LevelBasic};
use crate::state::{Layout, V8};
use crate::systems::assemble_fast;

/// Extremes of the quantities the basic-state hypotheses constrain.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Margins {
    pub rho_min: f64,
    pub rho_max: f64,
    pub min_d1_phi: f64,
    /// Smallest one-sided `d1 q` on the boundary.
    pub min_dq1: f64,
}

pub(crate) fn margins(pb: &Problem, u: &StField, phi: &StField) -> FbResult<Margins> {
    let g = pb.grid;
    let n = pb.n();
    let mut m = Margins { rho_min: f64::INFINITY, rho_max: f64::NEG_INFINITY, min_d1_phi: f64::INFINITY, min_dq1: f64::INFINITY };
    for k in 0..u.n_time {
        let lf = lift(&InterfaceState { phi: phi.level(k).to_vec(), dt_phi: vec![0.0; g.ntan()] }, &g, &pb.cutoff)?;
        m.min_d1_phi = m.min_d1_phi.min(lf.min_d1());
        m.min_dq1 = m.min_dq1.min(rayleigh_taylor_margin(&g, u.level(k), n, 0).margin);
        let (lo, hi) = u
            .level(k)
            .par_chunks(n)
            .map(|c| {
                let r = assemble_fast(c, &pb.model, g.d).1;
                if r.is_finite() {
                    (r, r)
                } else {
                    (f64::NEG_INFINITY, f64::INFINITY)
                }
            })
            .reduce(|| (f64::INFINITY, f64::NEG_INFINITY), |a, b| (a.0.min(b.0), a.1.max(b.1)));
        m.rho_min = m.rho_min.min(lo);
        m.rho_max = m.rho_max.max(hi);
    }
    if !(m.rho_min > pb.model.rho_min && m.rho_max < pb.model.rho_max) {
        let bad = if m.rho_min > pb.model.rho_min { m.rho_max } else { m.rho_min };
        return Err(FbError::AdmissibilityViolation { quantity: "rho", value: bad, lo: pb.model.rho_min, hi: pb.model.rho_max });
    }
    Ok(m)
}

/// Right-hand side of the magnetic transport
/// `d_t H = -w_1 D_1 H - v_i D_i H + (H . grad) v - H div v`
/// in lifted coordinates, `w_1 = (v . N - d_t Phi) / d1 Phi`.
fn transport_rhs(pb: &Problem, u: &[f64], lf: &Lifting, h: &[f64]) -> Vec<f64> {
    let g = pb.grid;
    let d = g.d;
    let n = pb.n();
    let l = Layout::new(d);
    let vel: Vec<f64> = u.chunks(n).flat_map(|c| (0..d).map(move |i| c[l.v(i)])).collect();
    let dh1 = g.d1(h, d);
    let dht: Vec<Vec<f64>> = (0..d - 1).map(|i| g.dtan(h, d, i)).collect();
    let dv1 = g.d1(&vel, d);
    let dvt: Vec<Vec<f64>> = (0..d - 1).map(|i| g.dtan(&vel, d, i)).collect();
    let mut out = vec![0.0; h.len()];
    out.par_chunks_mut(d).enumerate().for_each(|(p, o)| {
        let r = p * d;
        let phi1 = lf.d1(p);
        let grad: Vec<f64> = (0..d - 1).map(|i| lf.dtan(p, i)).collect();
        let v = &vel[r..r + d];
        let hv = &h[r..r + d];
        let mut w1 = v[0] - lf.dt(p);
        for i in 0..d - 1 {
            w1 -= v[1 + i] * grad[i];
        }
        w1 /= phi1;
        // gv[a][c] = lifted derivative of v_c along axis a
        let mut gv = [[0.0; 3]; 3];
        for c in 0..d {
            gv[0][c] = dv1[r + c] / phi1;
            for i in 0..d - 1 {
                gv[1 + i][c] = dvt[i][r + c] - grad[i] / phi1 * dv1[r + c];
            }
        }
        let div: f64 = (0..d).map(|a| gv[a][a]).sum();
        for c in 0..d {
            let mut acc = -w1 * dh1[r + c] - hv[c] * div;
            for i in 0..d - 1 {
                acc -= v[1 + i] * dht[i][r + c];
            }
            for a in 0..d {
                acc += hv[a] * gv[a][c];
            }
            o[c] = acc;
        }
    });
    out
}

/// Copies the last interior row into the outer row where the flow enters.
fn transport_inflow(pb: &Problem, u: &[f64], lf: &Lifting, h: &mut [f64]) {
    let g = pb.grid;
    let d = g.d;
    let n = pb.n();
    let l = Layout::new(d);
    let ntan = g.ntan();
    for jt in 0..ntan {
        let p = (g.n1 - 1) * ntan + jt;
        let mut w1 = u[p * n + l.v(0)] - lf.dt(p);
        for i in 0..d - 1 {
            w1 -= u[p * n + l.v(1 + i)] * lf.dtan(p, i);
        }
        if w1 < 0.0 {
            let q = p - ntan;
            h.copy_within(q * d..(q + 1) * d, p * d);
        }
    }
}

/// Replaces `H` on every level of `u` by the transport of the level-0 field
/// with the velocity of `u` and the front `phi` (SSP-RK3 on the level
/// spacing). Level 0 gets `H_1 = D phi . H'` on the boundary first; the
/// returned drift is the largest boundary `|H_N|` the march produces
/// before the same projection is applied to every level.
pub(crate) fn transport_magnetic(pb: &Problem, u: &StField, phi: &StField) -> FbResult<(StField, f64)> {
    let g = pb.grid;
    let d = g.d;
    let n = pb.n();
    let l = Layout::new(d);
    let dt = u.dt;
    let mut out = u.clone();
    project_normal_field(out.level_mut(0), phi.level(0), &g);
    let track = Track::new(u, phi);
    let extract = |lvl: &[f64]| -> Vec<f64> { lvl.chunks(n).flat_map(|c| (0..d).map(move |i| c[l.h(i)])).collect() };
    let mut h = extract(out.level(0));
    for k in 0..u.n_time - 1 {
        let t = k as f64 * dt;
        let (u0, l0) = track.at(t, &pb.cutoff)?;
        let (u1, l1) = track.at(t + dt, &pb.cutoff)?;
        let (uh, lh) = track.at(t + 0.5 * dt, &pb.cutoff)?;
        let k1 = transport_rhs(pb, &u0, &l0, &h);
        let mut h1: Vec<f64> = h.iter().zip(&k1).map(|(a, b)| a + dt * b).collect();
        transport_inflow(pb, &u1, &l1, &mut h1);
        let k2 = transport_rhs(pb, &u1, &l1, &h1);
        let mut h2: Vec<f64> = (0..h.len()).map(|i| 0.75 * h[i] + 0.25 * (h1[i] + dt * k2[i])).collect();
        transport_inflow(pb, &uh, &lh, &mut h2);
        let k3 = transport_rhs(pb, &uh, &lh, &h2);
        h = (0..h.len()).map(|i| h[i] / 3.0 + 2.0 / 3.0 * (h2[i] + dt * k3[i])).collect();
        transport_inflow(pb, &u1, &l1, &mut h);
        if h.iter().any(|x| !x.is_finite()) {
            return Err(FbError::DivergenceDetected { step: k + 1 });
        }
        let lvl = out.level_mut(k + 1);
        for p in 0..g.np() {
            for i in 0..d {
                lvl[p * n + l.h(i)] = h[p * d + i];
            }
        }
    }
    let drift = boundary_constraint_residuals(&out, phi).1;
    for k in 1..u.n_time {
        project_normal_field(out.level_mut(k), phi.level(k), &g);
    }
    Ok((out, drift))
}

/// Per level and boundary point, the pair `(l, m)` with `l = J r_+` and
/// `m = A_0 l / (l . A_0 l)`: the effective solver leaves the residual
/// component `l . R` at `x1 = 0` free, so the nonlinear residual is
/// measured after `R -> R - m (l . R)` there and with the outer row,
/// which the solver overwrites, masked.
#[derive(Clone, Debug)]
pub(crate) struct RowClosure {
    pub n: usize,
    pub ntan: usize,
    pub n1: usize,
    pub pairs: Vec<Vec<(V8, V8)>>,
}

impl RowClosure {
    pub fn from_slice(s: &CoeffSlice) -> Vec<(V8, V8)> {
        (0..s.grid.ntan())
            .map(|jt| {
                let pc = &s.pts[jt];
                let lv: V8 = pc.j * s.boundary.r_plus[jt];
                let a0l: V8 = pc.a[0] * lv;
                (lv, a0l / lv.dot(&a0l))
            })
            .collect()
    }

    pub fn apply(&self, r: &mut StField) {
        let n = self.n;
        for k in 0..r.n_time {
            let lvl = r.level_mut(k);
            for (jt, (lv, m)) in self.pairs[k].iter().enumerate() {
                let x = &mut lvl[jt * n..(jt + 1) * n];
                let s: f64 = (0..n).map(|c| lv[c] * x[c]).sum();
                for c in 0..n {
                    x[c] -= s * m[c];
                }
            }
            let last = (self.n1 - 1) * self.ntan * n;
            lvl[last..].iter_mut().for_each(|x| *x = 0.0);
        }
    }
}

/// Approximate solution on time levels together with the data the
/// iteration needs.
#[derive(Clone, Debug)]
pub struct ApproximateSolution {
    pub u: StField,
    pub phi: StField,
    /// `f^a = -L(U^a, Phi^a)` after the row closure.
    pub f: StField,
    /// Raw `L(U^a, Phi^a)` and `B(U^a, phi^a)`.
    pub interior: StField,
    pub boundary: StField,
    pub basic: LevelBasic,
    pub margins: Margins,
    /// Largest boundary `|H_N|` produced by the transport before projection.
    pub h_normal_drift: f64,
    /// Order of the Taylor extension.
    pub order: usize,
    pub(crate) closure: RowClosure,
}

impl ApproximateSolution {
    pub(crate) fn close(&self, r: &mut StField) {
        self.closure.apply(r);
    }
}

fn taylor(tr: &CompatibilityTraces, t: f64) -> (Vec<f64>, Vec<f64>) {
    let mut u = tr.u[0].clone();
    let mut phi = tr.phi[0].clone();
    let mut c = 1.0;
    for j in 1..=tr.m {
        c *= t / j as f64;
        u.iter_mut().zip(&tr.u[j]).for_each(|(a, b)| *a += c * b);
        phi.iter_mut().zip(&tr.phi[j]).for_each(|(a, b)| *a += c * b);
    }
    (u, phi)
}

/// Approximate solution on `n_time` levels over `[0, t_end]`:
/// Taylor extension of the traces, `q` lifted to zero boundary trace,
/// `v_1` corrected by the `chi`-lift so the kinematic condition holds
/// exactly for the level stencil, `H` from the transport equation, then
/// the margin checks (`d1 Phi >= 5/8`, `d1 q >= 3 kappa0 / 4`).
pub fn build_approximate(pb: &Problem, tr: &CompatibilityTraces, t_end: f64, n_time: usize) -> FbResult<ApproximateSolution> {
    if n_time < 5 {
        return Err(FbError::InvalidInput("the approximate solution needs at least five time levels".into()));
    }
    if !(t_end > 0.0) {
        return Err(FbError::InvalidInput(format!("final time must be positive, got {t_end}")));
    }
    let g = pb.grid;
    let d = g.d;
    let n = pb.n();
    let l = Layout::new(d);
    let ntan = g.ntan();
    let chi = pb.chi();
    let dt = t_end / (n_time - 1) as f64;
    let mut u = StField::zeros(g, n_time, dt, n, false);
    let mut phi = StField::zeros(g, n_time, dt, 1, true);
    for k in 0..n_time {
        let (uk, pk) = taylor(tr, k as f64 * dt);
        u.level_mut(k).copy_from_slice(&uk);
        phi.level_mut(k).copy_from_slice(&pk);
    }
    let dt_phi = phi.dt_bounded();
    for k in 0..n_time {
        let dphi: Vec<Vec<f64>> = (0..d - 1).map(|i| g.dtan_boundary(phi.level(k), 1, i)).collect();
        let lvl = u.level_mut(k);
        let mut shift_q = vec![0.0; ntan];
        let mut shift_v = vec![0.0; ntan];
        for jt in 0..ntan {
            let b = &lvl[jt * n..(jt + 1) * n];
            let mut w = dt_phi[k * ntan + jt];
            for i in 0..d - 1 {
                w += dphi[i][jt] * b[l.v(1 + i)];
            }
            shift_q[jt] = b[0];
            shift_v[jt] = w - b[l.v(0)];
        }
        for i1 in 0..g.n1 {
            let c = chi[i1][0];
            if c == 0.0 {
                continue;
            }
            for jt in 0..ntan {
                let p = i1 * ntan + jt;
                lvl[p * n] -= c * shift_q[jt];
                lvl[p * n + l.v(0)] += c * shift_v[jt];
            }
        }
    }
    let (u, drift) = transport_magnetic(pb, &u, &phi)?;
    let m = margins(pb, &u, &phi)?;
    if m.min_d1_phi < 0.625 {
        return Err(FbError::MarginLost(format!("d1 Phi^a reaches {:.4} < 5/8; shorten T", m.min_d1_phi)));
    }
    if m.min_dq1 < 0.75 * pb.kappa0 {
        return Err(FbError::MarginLost(format!(
            "d1 q^a reaches {:.4} < 3 kappa0 / 4 = {:.4}; shorten T",
            m.min_dq1,
            0.75 * pb.kappa0
        )));
    }
    let basic = pb.level_basic(u.clone(), phi.clone());
    let mut pairs = Vec::with_capacity(n_time);
    let mut interior = StField::zeros(g, n_time, dt, n, false);
    for k in 0..n_time {
        let s = CoeffSlice::new(&basic, k as f64 * dt, false)?;
        pairs.push(RowClosure::from_slice(&s));
        interior.level_mut(k).copy_from_slice(&s.interior_operator());
    }
    let closure = RowClosure { n, ntan, n1: g.n1, pairs };
    let mut f = interior.scaled(-1.0);
    closure.apply(&mut f);
    let boundary = boundary_residual(&basic);
    Ok(ApproximateSolution {
        u,
        phi,
        f,
        interior,
        boundary,
        basic,
        margins: m,
        h_normal_drift: drift,
        order: tr.m,
        closure,
    })
}

/// Number of levels on `[0, t_end]` such that the level spacing is at most
/// `safety * cfl / speed_sum` for the data at `t = 0`.
pub fn suggested_levels(pb: &Problem, u0: &[f64], phi0: &[f64], t_end: f64, cfl: f64, safety: f64) -> FbResult<usize> {
    pb.validate_data(u0, phi0)?;
    let g = pb.grid;
    let mk = |data: &[f64], nc: usize, boundary: bool| {
        let mut f = StField::zeros(g, 5, 1.0, nc, boundary);
        for k in 0..5 {
            f.level_mut(k).copy_from_slice(data);
        }
        f
    };
    let basic = pb.level_basic(mk(u0, pb.n(), false), mk(phi0, 1, true));
    let lim = dt_limit(&basic, 0.0, cfl)? * safety;
    Ok(((t_end / lim).ceil() as usize + 1).max(5))
}
