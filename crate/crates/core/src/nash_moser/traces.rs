use serde::Serialize;

use super::{evolution_rhs, Problem};
use crate::error::{FbError, FbResult};
use crate::grid::Grid;
use crate::scalar::Jet;

/// Highest trace order the jet arithmetic carries.
pub const MAX_TRACE_ORDER: usize = 7;

/// Tolerance on `|q_(j)|` at `x1 = 0` for compatibility.
pub const COMPATIBILITY_TOL: f64 = 1e-8;

type TraceJet = Jet<{ MAX_TRACE_ORDER + 1 }>;

/// Time-derivative traces `d_t^j U` and `d_t^j phi` at `t = 0` of the
/// semi-discrete evolution, for `j = 0..=m`.
#[derive(Clone, Debug)]
pub struct CompatibilityTraces {
    pub grid: Grid,
    pub m: usize,
    pub u: Vec<Vec<f64>>,
    pub phi: Vec<Vec<f64>>,
}

/// Traces up to order `m`, obtained by nested forward differentiation of the
/// discrete right-hand side: with `y_0..y_k` the Taylor coefficients found so
/// far, the `k`-th coefficient of `F(sum y_j t^j)` gives `y_{k+1}`.
pub fn compatibility_traces(pb: &Problem, u0: &[f64], phi0: &[f64], m: usize) -> FbResult<CompatibilityTraces> {
    if m > MAX_TRACE_ORDER {
        return Err(FbError::InvalidInput(format!("trace order {m} above the supported maximum {MAX_TRACE_ORDER}")));
    }
    pb.validate_data(u0, phi0)?;
    let chi = pb.chi();
    let mut cu = vec![u0.to_vec()];
    let mut cp = vec![phi0.to_vec()];
    for k in 0..m {
        let jet = |coeffs: &[Vec<f64>], i: usize| {
            let mut c = [0.0; MAX_TRACE_ORDER + 1];
            for (j, cj) in coeffs.iter().enumerate() {
                c[j] = cj[i];
            }
            TraceJet { c }
        };
        let uj: Vec<TraceJet> = (0..u0.len()).map(|i| jet(&cu, i)).collect();
        let pj: Vec<TraceJet> = (0..phi0.len()).map(|i| jet(&cp, i)).collect();
        let (du, dp) = evolution_rhs(pb, &chi, &uj, &pj, None)?;
        let s = 1.0 / (k + 1) as f64;
        cu.push(du.iter().map(|x| x.c[k] * s).collect());
        cp.push(dp.iter().map(|x| x.c[k] * s).collect());
    }
    let mut fact = 1.0;
    for j in 1..=m {
        fact *= j as f64;
        cu[j].iter_mut().for_each(|x| *x *= fact);
        cp[j].iter_mut().for_each(|x| *x *= fact);
    }
    Ok(CompatibilityTraces { grid: pb.grid, m, u: cu, phi: cp })
}

#[derive(Clone, Debug, Serialize)]
pub struct CompatibilityVerdict {
    /// Orders actually checked: `0..=order`.
    pub order: usize,
    /// `max |q_(j)|` on the boundary per order.
    pub residuals: Vec<f64>,
    pub worst: f64,
    pub first_failure: Option<usize>,
    pub pass: bool,
}

/// Boundary traces of `q_(j)` for `j <= m` (capped at the computed order).
pub fn check_compatibility(tr: &CompatibilityTraces, m: usize) -> CompatibilityVerdict {
    let order = m.min(tr.m);
    let n = 2 * tr.grid.d + 2;
    let ntan = tr.grid.ntan();
    let residuals: Vec<f64> =
        (0..=order).map(|j| (0..ntan).map(|jt| tr.u[j][jt * n].abs()).fold(0.0, f64::max)).collect();
    let first_failure = residuals.iter().position(|r| !(*r <= COMPATIBILITY_TOL));
    CompatibilityVerdict {
        order,
        worst: residuals.iter().copied().fold(0.0, f64::max),
        pass: first_failure.is_none(),
        first_failure,
        residuals,
    }
}

/// Independent estimate of `(d_t^2 U, d_t^2 phi)` at `t = 0`: three RK4
/// steps of the same semi-discrete evolution and the one-sided second
/// difference `(2 y_0 - 5 y_1 + 4 y_2 - y_3) / dt^2`.
pub fn marched_second_derivative(pb: &Problem, u0: &[f64], phi0: &[f64], dt: f64) -> FbResult<(Vec<f64>, Vec<f64>)> {
    pb.validate_data(u0, phi0)?;
    let chi = pb.chi();
    let f = |u: &[f64], p: &[f64]| evolution_rhs::<f64>(pb, &chi, u, p, None);
    let axpy = |y: &[f64], a: f64, k: &[f64]| -> Vec<f64> { y.iter().zip(k).map(|(y, k)| y + a * k).collect() };
    let mut us = vec![u0.to_vec()];
    let mut ps = vec![phi0.to_vec()];
    for _ in 0..3 {
        let (u, p) = (us.last().unwrap(), ps.last().unwrap());
        let (k1u, k1p) = f(u, p)?;
        let (k2u, k2p) = f(&axpy(u, 0.5 * dt, &k1u), &axpy(p, 0.5 * dt, &k1p))?;
        let (k3u, k3p) = f(&axpy(u, 0.5 * dt, &k2u), &axpy(p, 0.5 * dt, &k2p))?;
        let (k4u, k4p) = f(&axpy(u, dt, &k3u), &axpy(p, dt, &k3p))?;
        let step = |y: &[f64], a: &[f64], b: &[f64], c: &[f64], e: &[f64]| -> Vec<f64> {
            (0..y.len()).map(|i| y[i] + dt / 6.0 * (a[i] + 2.0 * b[i] + 2.0 * c[i] + e[i])).collect()
        };
        let nu = step(u, &k1u, &k2u, &k3u, &k4u);
        let np = step(p, &k1p, &k2p, &k3p, &k4p);
        us.push(nu);
        ps.push(np);
    }
    let second = |y: &[Vec<f64>]| -> Vec<f64> {
        (0..y[0].len()).map(|i| (2.0 * y[0][i] - 5.0 * y[1][i] + 4.0 * y[2][i] - y[3][i]) / (dt * dt)).collect()
    };
    Ok((second(&us), second(&ps)))
}
