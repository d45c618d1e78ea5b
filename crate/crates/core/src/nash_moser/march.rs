use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use super::{evolution_rhs, Problem};
use crate::error::{FbError, FbResult};
use crate::fd::fourth_difference;
use crate::grid::StField;
use crate::interface::{constraints, lift, rayleigh_taylor_margin, InterfaceState};
use crate::linear::{incoming_vector, FieldFn, FrontFn};
use crate::state::{Layout, M8};
use crate::systems::{assemble_fast, lift_matrix};

/// Extra forcing `t -> (interior source, kinematic source)`.
pub type MarchSource = Arc<dyn Fn(f64) -> (Vec<f64>, Vec<f64>) + Send + Sync>;

#[derive(Clone, Copy, Debug, Serialize)]
pub struct MarchConfig {
    pub dt: f64,
    pub n_steps: usize,
    pub cfl: f64,
    /// Coefficient of the fourth-difference damping, relative to the
    /// largest characteristic speed.
    pub dissipation: f64,
    pub check_cfl: bool,
}

impl MarchConfig {
    pub fn new(dt: f64, n_steps: usize) -> Self {
        MarchConfig { dt, n_steps, cfl: 0.4, dissipation: 0.01, check_cfl: true }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ConstraintSample {
    pub t: f64,
    /// `max |H_N|` on the boundary.
    pub h_normal: f64,
    /// `max |div^Phi H|` over the domain.
    pub div_h: f64,
    /// Smallest boundary `d1 q`.
    pub rt_margin: f64,
}

#[derive(Clone, Debug)]
pub struct MarchResult {
    pub u: StField,
    pub phi: StField,
    pub samples: Vec<ConstraintSample>,
    pub dt_limit: f64,
}

fn pencil_radius(a0: &M8, a: &M8, n: usize) -> f64 {
    let a0 = DMatrix::from_fn(n, n, |i, j| a0[(i, j)]);
    let Some(ch) = a0.cholesky() else { return f64::INFINITY };
    let Some(linv) = ch.l().try_inverse() else { return f64::INFINITY };
    let m = &linv * DMatrix::from_fn(n, n, |i, j| a[(i, j)]) * linv.transpose();
    let m = (&m + m.transpose()) * 0.5;
    m.symmetric_eigenvalues().iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
}

fn kinematic(pb: &Problem, u: &[f64], phi: &[f64]) -> Vec<f64> {
    let g = pb.grid;
    let d = g.d;
    let n = pb.n();
    let l = Layout::new(d);
    let dphi: Vec<Vec<f64>> = (0..d - 1).map(|i| g.dtan_boundary(phi, 1, i)).collect();
    (0..g.ntan())
        .map(|jt| {
            let b = &u[jt * n..(jt + 1) * n];
            let mut k = b[l.v(0)];
            for i in 0..d - 1 {
                k -= dphi[i][jt] * b[l.v(1 + i)];
            }
            k
        })
        .collect()
}

/// `(sum_axis rho_axis / h_axis, max rho_axis)` over the grid, with the
/// lifted normal matrix.
fn speeds(pb: &Problem, u: &[f64], phi: &[f64], dt_phi: &[f64]) -> FbResult<(f64, f64)> {
    let g = pb.grid;
    let d = g.d;
    let n = pb.n();
    let lf = lift(&InterfaceState { phi: phi.to_vec(), dt_phi: dt_phi.to_vec() }, &g, &pb.cutoff)?;
    let (sum, max) = (0..g.np())
        .into_par_iter()
        .map(|p| {
            let (a, _) = assemble_fast(&u[p * n..(p + 1) * n], &pb.model, d);
            let grad: Vec<f64> = (0..d - 1).map(|i| lf.dtan(p, i)).collect();
            let a1 = lift_matrix(&a, d, lf.dt(p), &grad, lf.d1(p));
            let r1 = pencil_radius(&a[0], &a1, n);
            let mut s = r1 / g.h1();
            let mut m = r1;
            for i in 0..d - 1 {
                let r = pencil_radius(&a[0], &a[2 + i], n);
                s += r / g.ht();
                m = m.max(r);
            }
            (s, m)
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1)));
    Ok((sum, max))
}

/// `q = 0` on the boundary by a step along the incoming eigenvector of the
/// pencil `(A~_1, A_0)`; the outer row keeps its initial offset from the
/// row inside it.
fn close(pb: &Problem, u: &mut [f64], phi: &[f64], dt_phi: &[f64], offset: &[f64]) -> FbResult<()> {
    let g = pb.grid;
    let d = g.d;
    let n = pb.n();
    let ntan = g.ntan();
    let c0 = pb.cutoff.eval(0.0);
    let dphi: Vec<Vec<f64>> = (0..d - 1).map(|i| g.dtan_boundary(phi, 1, i)).collect();
    for jt in 0..ntan {
        let b = &mut u[jt * n..(jt + 1) * n];
        let (a, _) = assemble_fast(b, &pb.model, d);
        let grad: Vec<f64> = (0..d - 1).map(|i| c0[0] * dphi[i][jt]).collect();
        let a1 = lift_matrix(&a, d, c0[0] * dt_phi[jt], &grad, 1.0 + c0[1] * phi[jt]);
        let r = incoming_vector(&a[0], &a1, n)?;
        let alpha = -b[0] / r[0];
        for k in 0..n {
            b[k] += alpha * r[k];
        }
    }
    let len = ntan * n;
    let (last, prev) = ((g.n1 - 1) * len, (g.n1 - 2) * len);
    for k in 0..len {
        u[last + k] = u[prev + k] + offset[k];
    }
    Ok(())
}

fn sample(pb: &Problem, t: f64, u: &[f64], phi: &[f64]) -> FbResult<ConstraintSample> {
    let g = pb.grid;
    let n = pb.n();
    let l = Layout::new(g.d);
    let lf = lift(&InterfaceState { phi: phi.to_vec(), dt_phi: vec![0.0; g.ntan()] }, &g, &pb.cutoff)?;
    let (hn, div) = constraints(u, n, l.h(0), &lf);
    let amax = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    Ok(ConstraintSample { t, h_normal: amax(&hn), div_h: amax(&div), rt_margin: rayleigh_taylor_margin(&g, u, n, 0).margin })
}

/// Explicit SSP-RK3 march of the nonlinear problem in the fixed domain:
/// interior system with coefficients frozen per stage, `d_t phi = v . N`,
/// `q = 0` imposed through the incoming characteristic after every stage,
/// and fourth-difference damping. Stops with `SignConditionLost` once the
/// boundary `d1 q` falls below `kappa0 / 2`.
pub fn nonlinear_march(
    pb: &Problem,
    u0: &[f64],
    phi0: &[f64],
    cfg: &MarchConfig,
    source: Option<&MarchSource>,
) -> FbResult<MarchResult> {
    pb.validate_data(u0, phi0)?;
    if !(cfg.dt > 0.0) {
        return Err(FbError::InvalidInput(format!("time step must be positive, got {}", cfg.dt)));
    }
    let g = pb.grid;
    let n = pb.n();
    let ntan = g.ntan();
    let chi = pb.chi();
    let dt = cfg.dt;
    let src_at = |t: f64| source.map(|s| s(t));
    let k0 = {
        let mut k = kinematic(pb, u0, phi0);
        if let Some((_, gk)) = src_at(0.0) {
            k.iter_mut().zip(&gk).for_each(|(a, b)| *a += b);
        }
        k
    };
    let (speed_sum, max_speed) = speeds(pb, u0, phi0, &k0)?;
    let dt_limit = cfg.cfl / speed_sum;
    if cfg.check_cfl && dt > dt_limit * (1.0 + 1e-12) {
        return Err(FbError::CflViolation { dt, limit: dt_limit });
    }
    let diss = cfg.dissipation * max_speed;
    let dims = g.dims(n);
    let rhs = |u: &[f64], phi: &[f64], t: f64| -> FbResult<(Vec<f64>, Vec<f64>)> {
        let s = src_at(t);
        let (mut du, dp) = evolution_rhs::<f64>(pb, &chi, u, phi, s.as_ref().map(|(f, k)| (f.as_slice(), k.as_slice())))?;
        if diss > 0.0 {
            let q = fourth_difference(u, &dims, 0, false);
            let c1 = diss / g.h1();
            du.iter_mut().zip(&q).for_each(|(o, x)| *o -= c1 * x);
            let ct = diss / g.ht();
            for i in 0..g.d - 1 {
                let q = fourth_difference(u, &dims, 1 + g.tangential_axis(i), true);
                du.iter_mut().zip(&q).for_each(|(o, x)| *o -= ct * x);
            }
        }
        Ok((du, dp))
    };
    let closure = |u: &mut Vec<f64>, phi: &[f64], t: f64, offset: &[f64]| -> FbResult<()> {
        let mut k = kinematic(pb, u, phi);
        if let Some((_, gk)) = src_at(t) {
            k.iter_mut().zip(&gk).for_each(|(a, b)| *a += b);
        }
        close(pb, u, phi, &k, offset)
    };
    let check_sign = |u: &[f64], t: f64| -> FbResult<()> {
        let m = rayleigh_taylor_margin(&g, u, n, 0).margin;
        if m < 0.5 * pb.kappa0 {
            return Err(FbError::SignConditionLost { value: m, threshold: 0.5 * pb.kappa0, t });
        }
        Ok(())
    };
    let len = ntan * n;
    let offset: Vec<f64> = (0..len).map(|k| u0[(g.n1 - 1) * len + k] - u0[(g.n1 - 2) * len + k]).collect();

    let nt = cfg.n_steps + 1;
    let mut uf = StField::zeros(g, nt, dt, n, false);
    let mut pf = StField::zeros(g, nt, dt, 1, true);
    uf.level_mut(0).copy_from_slice(u0);
    pf.level_mut(0).copy_from_slice(phi0);
    check_sign(u0, 0.0)?;
    let mut samples = vec![sample(pb, 0.0, u0, phi0)?];
    let mut u = u0.to_vec();
    let mut phi = phi0.to_vec();
    let lin = |a: f64, x: &[f64], b: f64, y: &[f64], c: f64, k: &[f64]| -> Vec<f64> {
        (0..x.len()).map(|i| a * x[i] + b * (y[i] + c * k[i])).collect()
    };
    for step in 0..cfg.n_steps {
        let t = step as f64 * dt;
        let (k1, p1) = rhs(&u, &phi, t)?;
        let mut u1 = lin(0.0, &u, 1.0, &u, dt, &k1);
        let phi1 = lin(0.0, &phi, 1.0, &phi, dt, &p1);
        closure(&mut u1, &phi1, t + dt, &offset)?;
        let (k2, p2) = rhs(&u1, &phi1, t + dt)?;
        let mut u2 = lin(0.75, &u, 0.25, &u1, dt, &k2);
        let phi2 = lin(0.75, &phi, 0.25, &phi1, dt, &p2);
        closure(&mut u2, &phi2, t + 0.5 * dt, &offset)?;
        let (k3, p3) = rhs(&u2, &phi2, t + 0.5 * dt)?;
        u = lin(1.0 / 3.0, &u, 2.0 / 3.0, &u2, dt, &k3);
        phi = lin(1.0 / 3.0, &phi, 2.0 / 3.0, &phi2, dt, &p3);
        closure(&mut u, &phi, t + dt, &offset)?;
        if u.iter().chain(&phi).any(|x| !x.is_finite()) {
            return Err(FbError::DivergenceDetected { step: step + 1 });
        }
        check_sign(&u, t + dt)?;
        uf.level_mut(step + 1).copy_from_slice(&u);
        pf.level_mut(step + 1).copy_from_slice(&phi);
        samples.push(sample(pb, t + dt, &u, &phi)?);
    }
    Ok(MarchResult { u: uf, phi: pf, samples, dt_limit })
}

/// Forcing for which `(u_star, phi_star)` solves the semi-discrete march
/// equations exactly: `f = A_0 d_t U* + A~_1 D_1 U* + A_i D_i U*` and
/// `g = d_t phi* - v* . N*`, with time derivatives by a fourth-order
/// central difference of step `1e-4`.
pub fn manufactured_source(pb: &Problem, u_star: FieldFn, phi_star: FrontFn) -> MarchSource {
    let pb = pb.clone();
    Arc::new(move |t| {
        let g = pb.grid;
        let d = g.d;
        let n = pb.n();
        let ntan = g.ntan();
        let su = |t: f64| g.sample(n, |x, o| o.copy_from_slice(&u_star(t, x)));
        let sp = |t: f64| g.sample_boundary(1, |x, o| o[0] = phi_star(t, x));
        let h = 1e-4;
        let fd = |f: &dyn Fn(f64) -> Vec<f64>| {
            let (a, b, c, e) = (f(t + 2.0 * h), f(t + h), f(t - h), f(t - 2.0 * h));
            (0..a.len()).map(|k| (-a[k] + 8.0 * b[k] - 8.0 * c[k] + e[k]) / (12.0 * h)).collect::<Vec<f64>>()
        };
        let (u, phi) = (su(t), sp(t));
        let (dt_u, dt_phi) = (fd(&su), fd(&sp));
        let k = kinematic(&pb, &u, &phi);
        let gk: Vec<f64> = (0..ntan).map(|jt| dt_phi[jt] - k[jt]).collect();
        let lf = lift(&InterfaceState { phi: phi.clone(), dt_phi: dt_phi.clone() }, &g, &pb.cutoff)
            .expect("manufactured front out of range");
        let du1 = g.d1(&u, n);
        let dut: Vec<Vec<f64>> = (0..d - 1).map(|i| g.dtan(&u, n, i)).collect();
        let mut f = vec![0.0; u.len()];
        f.par_chunks_mut(n).enumerate().for_each(|(p, o)| {
            let (a, _) = assemble_fast(&u[p * n..(p + 1) * n], &pb.model, d);
            let grad: Vec<f64> = (0..d - 1).map(|i| lf.dtan(p, i)).collect();
            let a1 = lift_matrix(&a, d, lf.dt(p), &grad, lf.d1(p));
            for row in 0..n {
                let mut acc = 0.0;
                for col in 0..n {
                    acc += a[0][(row, col)] * dt_u[p * n + col] + a1[(row, col)] * du1[p * n + col];
                    for i in 0..d - 1 {
                        acc += a[2 + i][(row, col)] * dut[i][p * n + col];
                    }
                }
                o[row] = acc;
            }
        });
        (f, gk)
    })
}
