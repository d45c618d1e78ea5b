//! Nonlinear layer: compatibility traces of the initial data, the
//! approximate solution, the Nash-Moser iteration with its error
//! bookkeeping, and an explicit nonlinear march used as an independent
//! oracle.

mod approx;
mod iteration;
mod march;
mod traces;

pub use approx::{build_approximate, suggested_levels, ApproximateSolution, Margins};
pub use iteration::{
    boundary_derivative, boundary_residual, convergence_report, interior_derivative, interior_residual, iterate,
    modified_state, run_nash_moser, theta_bounds_exact, theta_schedule, ConvergenceReport, IterationRecord,
    ModifiedState, NmConfig, NmRun, NmState, SlopeFit, SplitReport,
};
pub use march::{manufactured_source, nonlinear_march, ConstraintSample, MarchConfig, MarchResult, MarchSource};
pub use traces::{
    check_compatibility, compatibility_traces, marched_second_derivative, CompatibilityTraces, CompatibilityVerdict,
    COMPATIBILITY_TOL, MAX_TRACE_ORDER,
};

use rayon::prelude::*;

use crate::eos::EosModel;
use crate::error::{FbError, FbResult};
use crate::grid::{Grid, StField};
use crate::interface::{lift, Cutoff, InterfaceState, Lifting};
use crate::linear::{level_stencil, LevelBasic};
use crate::scalar::{Jet, Scalar};
use crate::state::{Layout, Mat};
use crate::systems::{assemble, assemble_generic};

/// Data shared by every stage of the nonlinear solve.
#[derive(Clone, Debug)]
pub struct Problem {
    pub grid: Grid,
    pub model: EosModel,
    pub cutoff: Cutoff,
    /// Rayleigh-Taylor constant: the data satisfy `d1 q >= kappa0` on the boundary.
    pub kappa0: f64,
    pub reference: Vec<f64>,
}

impl Problem {
    pub fn n(&self) -> usize {
        2 * self.grid.d + 2
    }

    pub(crate) fn chi(&self) -> Vec<[f64; 3]> {
        (0..self.grid.n1).map(|i| self.cutoff.eval(self.grid.x1(i))).collect()
    }

    pub(crate) fn level_basic(&self, u: StField, phi: StField) -> LevelBasic {
        LevelBasic::new(u, phi, self.model, self.cutoff, self.kappa0, self.reference.clone())
    }

    /// Shape, admissibility and lifting checks on initial data.
    pub fn validate_data(&self, u0: &[f64], phi0: &[f64]) -> FbResult<()> {
        let g = self.grid;
        let n = self.n();
        if u0.len() != g.np() * n || phi0.len() != g.ntan() {
            return Err(FbError::InvalidInput(format!(
                "initial data has {} / {} values, grid needs {} / {}",
                u0.len(),
                phi0.len(),
                g.np() * n,
                g.ntan()
            )));
        }
        if self.reference.len() != n {
            return Err(FbError::InvalidInput(format!("reference state needs {n} components")));
        }
        for chunk in u0.chunks(n) {
            assemble(chunk, &self.model, g.d)?;
        }
        let lf = lift(&InterfaceState { phi: phi0.to_vec(), dt_phi: vec![0.0; g.ntan()] }, &g, &self.cutoff)?;
        let m = lf.min_d1();
        if m < 0.5 {
            return Err(FbError::DegenerateLifting(m));
        }
        Ok(())
    }
}

/// Scalars made of independent `f64` planes on which linear stencils act
/// plane by plane.
pub(crate) trait Planes: Scalar {
    const P: usize;
    fn plane(&self, k: usize) -> f64;
    fn set_plane(&mut self, k: usize, x: f64);
}

impl Planes for f64 {
    const P: usize = 1;
    fn plane(&self, _: usize) -> f64 {
        *self
    }
    fn set_plane(&mut self, _: usize, x: f64) {
        *self = x;
    }
}

impl<const M: usize> Planes for Jet<M> {
    const P: usize = M;
    fn plane(&self, k: usize) -> f64 {
        self.c[k]
    }
    fn set_plane(&mut self, k: usize, x: f64) {
        self.c[k] = x;
    }
}

pub(crate) fn apply_linear<T: Planes>(x: &[T], op: impl Fn(&[f64]) -> Vec<f64>) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for k in 0..T::P {
        let plane: Vec<f64> = x.iter().map(|v| v.plane(k)).collect();
        if plane.iter().all(|v| *v == 0.0) {
            continue;
        }
        for (o, v) in out.iter_mut().zip(op(&plane)) {
            o.set_plane(k, v);
        }
    }
    out
}

/// Gaussian elimination with partial pivoting on the leading `n x n` block.
pub(crate) fn solve_small<T: Scalar>(mut a: Mat<T>, mut b: Vec<T>, n: usize) -> Option<Vec<T>> {
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].re().abs().total_cmp(&a[j][col].re().abs()))?;
        if !(a[piv][col].re().abs() > 1e-300) {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        let inv = a[col][col].recip();
        for r in col + 1..n {
            let f = a[r][col] * inv;
            for c in col..n {
                let t = a[col][c];
                a[r][c] -= f * t;
            }
            let t = b[col];
            b[r] -= f * t;
        }
    }
    for r in (0..n).rev() {
        let mut acc = b[r];
        for c in r + 1..n {
            acc -= a[r][c] * b[c];
        }
        b[r] = acc / a[r][r];
    }
    Some(b)
}

/// Right-hand side of the semi-discrete evolution
/// `A_0 d_t U = f - A~_1 D_1 U - A_i D_i U`, `d_t phi = v_1 - D phi . v' + g`
/// with the lifting built from `phi` and its own time derivative.
/// Returns `(d_t U, d_t phi)`.
pub(crate) fn evolution_rhs<T: Planes>(
    pb: &Problem,
    chi: &[[f64; 3]],
    u: &[T],
    phi: &[T],
    src: Option<(&[f64], &[f64])>,
) -> FbResult<(Vec<T>, Vec<T>)> {
    let g = pb.grid;
    let d = g.d;
    let n = 2 * d + 2;
    let l = Layout::new(d);
    let ntan = g.ntan();
    let dphi: Vec<Vec<T>> = (0..d - 1).map(|i| apply_linear(phi, |x| g.dtan_boundary(x, 1, i))).collect();
    let mut dt_phi: Vec<T> = (0..ntan)
        .map(|jt| {
            let b = &u[jt * n..(jt + 1) * n];
            let mut k = b[l.v(0)];
            for i in 0..d - 1 {
                k -= dphi[i][jt] * b[l.v(1 + i)];
            }
            k
        })
        .collect();
    if let Some((_, gk)) = src {
        for (k, s) in dt_phi.iter_mut().zip(gk) {
            *k = *k + *s;
        }
    }
    let du1 = apply_linear(u, |x| g.d1(x, n));
    let dut: Vec<Vec<T>> = (0..d - 1).map(|i| apply_linear(u, |x| g.dtan(x, n, i))).collect();
    let rows: Vec<FbResult<Vec<T>>> = (0..g.np())
        .into_par_iter()
        .map(|p| {
            let (i1, jt) = (p / ntan, p % ntan);
            let c = chi[i1];
            let (a, rho) = assemble_generic(&u[p * n..(p + 1) * n], &pb.model, d);
            let rho = rho.re();
            if !(rho > pb.model.rho_min && rho < pb.model.rho_max) {
                return Err(FbError::AdmissibilityViolation {
                    quantity: "rho",
                    value: rho,
                    lo: pb.model.rho_min,
                    hi: pb.model.rho_max,
                });
            }
            let phi_t = dt_phi[jt] * c[0];
            let inv1 = (phi[jt] * c[1] + 1.0).recip();
            let grad: Vec<T> = (0..d - 1).map(|i| dphi[i][jt] * c[0]).collect();
            let mut b = vec![T::zero(); n];
            for (row, br) in b.iter_mut().enumerate() {
                let mut acc = src.map_or(T::zero(), |(f, _)| T::cst(f[p * n + row]));
                for col in 0..n {
                    let mut at = a[1][row][col] - a[0][row][col] * phi_t;
                    for i in 0..d - 1 {
                        at -= a[2 + i][row][col] * grad[i];
                        acc -= a[2 + i][row][col] * dut[i][p * n + col];
                    }
                    acc -= at * inv1 * du1[p * n + col];
                }
                *br = acc;
            }
            solve_small(a[0], b, n).ok_or_else(|| FbError::BasicStateViolation(format!("singular A_0 at point {p}")))
        })
        .collect();
    let mut du = Vec::with_capacity(u.len());
    for r in rows {
        du.extend(r?);
    }
    Ok((du, dt_phi))
}

/// Level fields sampled at arbitrary times by the same cubic interpolation
/// the level basic state uses.
pub(crate) struct Track<'a> {
    pub u: &'a StField,
    pub phi: &'a StField,
    pub dt_phi: Vec<f64>,
}

impl<'a> Track<'a> {
    pub fn new(u: &'a StField, phi: &'a StField) -> Self {
        Track { u, phi, dt_phi: phi.dt_bounded() }
    }

    fn interp(data: &[f64], len: usize, t: f64, f: &StField) -> Vec<f64> {
        let (start, w) = level_stencil(t, f.dt, f.n_time);
        let mut out = vec![0.0; len];
        for (k, wk) in w.iter().enumerate() {
            if *wk == 0.0 {
                continue;
            }
            for (o, x) in out.iter_mut().zip(&data[(start + k) * len..(start + k + 1) * len]) {
                *o += wk * x;
            }
        }
        out
    }

    /// `(U, lifting)` at time `t`.
    pub fn at(&self, t: f64, cutoff: &Cutoff) -> FbResult<(Vec<f64>, Lifting)> {
        let u = Self::interp(&self.u.data, self.u.level_len(), t, self.u);
        let np = self.phi.level_len();
        let phi = Self::interp(&self.phi.data, np, t, self.phi);
        let dt_phi = Self::interp(&self.dt_phi, np, t, self.phi);
        let lf = lift(&InterfaceState { phi, dt_phi }, &self.u.grid, cutoff)?;
        Ok((u, lf))
    }
}

/// `max |D_t phi - v . N|` and `max |H . N|` on the boundary over all levels,
/// with `D_t` the bounded level stencil.
pub fn boundary_constraint_residuals(u: &StField, phi: &StField) -> (f64, f64) {
    let g = u.grid;
    let d = g.d;
    let n = u.nc;
    let l = Layout::new(d);
    let dt_phi = phi.dt_bounded();
    let ntan = g.ntan();
    let (mut kin, mut hn) = (0.0f64, 0.0f64);
    for k in 0..u.n_time {
        let ph = phi.level(k);
        let dphi: Vec<Vec<f64>> = (0..d - 1).map(|i| g.dtan_boundary(ph, 1, i)).collect();
        let lvl = u.level(k);
        for jt in 0..ntan {
            let b = &lvl[jt * n..(jt + 1) * n];
            let mut vn = b[l.v(0)];
            let mut h = b[l.h(0)];
            for i in 0..d - 1 {
                vn -= dphi[i][jt] * b[l.v(1 + i)];
                h -= dphi[i][jt] * b[l.h(1 + i)];
            }
            kin = kin.max((dt_phi[k * ntan + jt] - vn).abs());
            hn = hn.max(h.abs());
        }
    }
    (kin, hn)
}

/// Sets `H_1 = sum_i d_i phi H_i` on the boundary row of one level.
pub(crate) fn project_normal_field(u: &mut [f64], phi: &[f64], g: &Grid) {
    let d = g.d;
    let n = 2 * d + 2;
    let l = Layout::new(d);
    let dphi: Vec<Vec<f64>> = (0..d - 1).map(|i| g.dtan_boundary(phi, 1, i)).collect();
    for jt in 0..g.ntan() {
        let b = &mut u[jt * n..(jt + 1) * n];
        let mut h1 = 0.0;
        for i in 0..d - 1 {
            h1 += dphi[i][jt] * b[l.h(1 + i)];
        }
        b[l.h(0)] = h1;
    }
}
