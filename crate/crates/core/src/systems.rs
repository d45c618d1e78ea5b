//! Pointwise coefficient matrices of the symmetric hyperbolic formulations,
//! the lifted boundary matrix, the W-transform and the algebraic checks
//! built on them.

use serde::Serialize;

use crate::eos::EosModel;
use crate::error::{FbError, FbResult};
use crate::scalar::{Dual, Scalar};
use crate::state::{congruence, re_mat, sym_eigenvalues, zero_mat, Layout, Mat, M8, NMAX};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Branch {
    NonRel,
    Rel,
}

/// `a[0] = A_0`, `a[k] = A_k` for `k = 1..=d`; unused slots are zero.
#[derive(Clone, Debug)]
pub struct SystemMatrices {
    pub d: usize,
    pub branch: Branch,
    pub a: [M8; 4],
}

/// Relativistic building blocks in the variables `V = (p, w, H, S)`.
#[derive(Clone, Debug)]
pub struct RelBlocks {
    pub b: [M8; 4],
    pub jac: M8,
    pub gamma: f64,
}

/// Generic-scalar assembly of the primary-variable matrices. The returned
/// density is used for the admissibility check.
pub fn assemble_generic<T: Scalar>(u: &[T], model: &EosModel, d: usize) -> ([Mat<T>; 4], T) {
    if model.eps_c == 0.0 {
        nonrel_generic(u, model, d)
    } else {
        let (b, jac, rho) = rel_blocks_generic(u, model, d);
        let n = 2 * d + 2;
        let mut a = [zero_mat::<T>(); 4];
        for k in 0..=d {
            a[k] = congruence(&jac, &b[k], n);
        }
        (a, rho)
    }
}

fn nonrel_generic<T: Scalar>(u: &[T], model: &EosModel, d: usize) -> ([Mat<T>; 4], T) {
    let l = Layout::new(d);
    let q = u[0];
    let v = |i: usize| u[l.v(i)];
    let h = |i: usize| u[l.h(i)];
    let mut h2 = T::zero();
    for i in 0..d {
        h2 += h(i) * h(i);
    }
    let p = q - h2 * 0.5;
    let th = model.kind.thermo(p, u[l.s()]);
    let r = th.rho_p / th.rho;
    let mut a = [zero_mat::<T>(); 4];
    let a0 = &mut a[0];
    a0[0][0] = r;
    for j in 0..d {
        a0[0][l.h(j)] = -(r * h(j));
        a0[l.h(j)][0] = -(r * h(j));
        a0[l.v(j)][l.v(j)] = th.rho;
        for i in 0..d {
            let delta = if i == j { T::one() } else { T::zero() };
            a0[l.h(i)][l.h(j)] = delta + r * h(i) * h(j);
        }
    }
    a0[l.s()][l.s()] = T::one();
    for k in 0..d {
        let ak = &mut a[k + 1];
        let vk = v(k);
        ak[0][0] = vk * r;
        ak[0][l.v(k)] = T::one();
        ak[l.v(k)][0] = T::one();
        for j in 0..d {
            ak[0][l.h(j)] = -(vk * r * h(j));
            ak[l.h(j)][0] = -(vk * r * h(j));
            ak[l.v(j)][l.v(j)] = th.rho * vk;
            ak[l.v(j)][l.h(j)] = -h(k);
            ak[l.h(j)][l.v(j)] = -h(k);
            for i in 0..d {
                let delta = if i == j { T::one() } else { T::zero() };
                ak[l.h(i)][l.h(j)] = vk * (delta + r * h(i) * h(j));
            }
        }
        ak[l.s()][l.s()] = vk;
    }
    (a, th.rho)
}

fn rel_blocks_generic<T: Scalar>(u: &[T], model: &EosModel, d: usize) -> ([Mat<T>; 4], Mat<T>, T) {
    let l = Layout::new(d);
    let e2 = model.eps_c * model.eps_c;
    let q = u[0];
    let v: Vec<T> = (0..d).map(|i| u[l.v(i)]).collect();
    let hh: Vec<T> = (0..d).map(|i| u[l.h(i)]).collect();
    let dot = |x: &[T], y: &[T]| x.iter().zip(y).fold(T::zero(), |acc, (a, b)| acc + *a * *b);
    let v2 = dot(&v, &v);
    let h2 = dot(&hh, &hh);
    let vh = dot(&v, &hh);
    let gi2 = T::one() - v2 * e2;
    let gam = gi2.sqrt().recip();
    let gi = gam.recip();
    let b2 = gi2 * h2 * e2 + vh * vh * (e2 * e2);
    let p = q - (gi2 * h2 + vh * vh * e2) * 0.5;
    let th = model.kind.thermo(p, u[l.s()]);
    let rho = th.rho;
    let enth = T::one() + (th.e + p / rho) * e2;
    let inv_rhoa2 = th.rho_p / rho;
    let c1 = rho * enth * gam + h2 * gi * e2;
    let delta = |i: usize, j: usize| if i == j { T::one() } else { T::zero() };
    let proj = |i: usize, j: usize| delta(i, j) - v[i] * v[j] * e2;
    let m0 = |i: usize, j: usize| (delta(i, j) + gam * gam * v[i] * v[j] * e2) * gi;
    let g: Vec<T> = (0..d).map(|i| vh * hh[i] * e2 - b2 * v[i]).collect();
    let bb: Vec<T> = (0..d).map(|i| gi2 * hh[i] + vh * v[i] * e2).collect();
    let aa: Vec<T> = (0..d).map(|i| (h2 * v[i] - vh * hh[i]) * e2).collect();

    let mut b = [zero_mat::<T>(); 4];
    let b0 = &mut b[0];
    b0[0][0] = gam * inv_rhoa2;
    for i in 0..d {
        b0[0][l.v(i)] = v[i] * e2;
        b0[l.v(i)][0] = v[i] * e2;
        for j in 0..d {
            b0[l.v(i)][l.v(j)] = c1 * proj(i, j) - b2 * v[i] * v[j] * gi * e2 - hh[i] * hh[j] * gi * e2
                + vh * (hh[i] * v[j] + v[i] * hh[j]) * gi * (e2 * e2);
            b0[l.h(i)][l.h(j)] = m0(i, j);
        }
    }
    b0[l.s()][l.s()] = T::one();
    for k in 0..d {
        let bk = &mut b[k + 1];
        bk[0][0] = gam * v[k] * inv_rhoa2;
        bk[0][l.v(k)] = T::one();
        bk[l.v(k)][0] = T::one();
        for i in 0..d {
            for j in 0..d {
                let mut aij = v[k] * (c1 * proj(i, j) + (b2 * v[i] * v[j] - hh[i] * hh[j]) * gi * e2);
                aij += hh[k] * gi * e2 * ((hh[i] * v[j] + v[i] * hh[j]) * gi2 - vh * proj(i, j) * 2.0);
                aij += (g[i] * delta(j, k) + delta(i, k) * g[j]) * gi;
                bk[l.v(i)][l.v(j)] = aij;
                // N_k[i][j] couples induction row i with w_j
                let nij = bb[i] * (delta(j, k) - v[k] * v[j] * e2) - gi2 * hh[k] * delta(i, j);
                bk[l.h(i)][l.v(j)] = nij;
                bk[l.v(j)][l.h(i)] = nij;
                bk[l.h(i)][l.h(j)] = v[k] * m0(i, j);
            }
        }
        bk[l.s()][l.s()] = v[k];
    }

    let mut jac = zero_mat::<T>();
    jac[0][0] = T::one();
    for i in 0..d {
        jac[0][l.v(i)] = aa[i];
        jac[0][l.h(i)] = -bb[i];
        jac[l.h(i)][l.h(i)] = T::one();
        for j in 0..d {
            jac[l.v(i)][l.v(j)] = gam * gam * m0(i, j);
        }
    }
    jac[l.s()][l.s()] = T::one();
    (b, jac, rho)
}

fn check_state(u: &[f64], model: &EosModel, d: usize) -> FbResult<()> {
    if u.len() < 2 * d + 2 || u.iter().take(2 * d + 2).any(|x| !x.is_finite()) {
        return Err(FbError::InvalidInput("state vector has wrong length or non-finite entries".into()));
    }
    if model.eps_c > 0.0 {
        let l = Layout::new(d);
        let v2: f64 = (0..d).map(|i| u[l.v(i)] * u[l.v(i)]).sum();
        let beta = model.eps_c * v2.sqrt();
        if beta >= 1.0 {
            return Err(FbError::SuperluminalInput(beta));
        }
    }
    Ok(())
}

fn finish(a: [Mat<f64>; 4], rho: f64, model: &EosModel, d: usize, branch: Branch) -> FbResult<SystemMatrices> {
    model.check_band(rho)?;
    Ok(SystemMatrices { d, branch, a: [re_mat(&a[0]), re_mat(&a[1]), re_mat(&a[2]), re_mat(&a[3])] })
}

pub fn assemble_nonrel(u: &[f64], model: &EosModel, d: usize) -> FbResult<SystemMatrices> {
    check_state(u, model, 0)?;
    let (a, rho) = nonrel_generic(u, model, d);
    finish(a, rho, model, d, Branch::NonRel)
}

/// Relativistic matrices `A_alpha = J^T B_alpha J`; at `eps_c = 0` the
/// branch degenerates to the non-relativistic one exactly.
pub fn assemble_rel(u: &[f64], model: &EosModel, d: usize) -> FbResult<SystemMatrices> {
    if model.eps_c == 0.0 {
        let mut m = assemble_nonrel(u, model, d)?;
        m.branch = Branch::Rel;
        return Ok(m);
    }
    check_state(u, model, d)?;
    let (a, rho) = assemble_generic(u, model, d);
    finish(a, rho, model, d, Branch::Rel)
}

/// Dispatches on `model.eps_c`.
pub fn assemble(u: &[f64], model: &EosModel, d: usize) -> FbResult<SystemMatrices> {
    if model.eps_c == 0.0 {
        assemble_nonrel(u, model, d)
    } else {
        assemble_rel(u, model, d)
    }
}

/// Unchecked hot-loop assembly (caller has validated admissibility).
#[inline]
pub fn assemble_fast(u: &[f64], model: &EosModel, d: usize) -> ([M8; 4], f64) {
    let (a, rho) = assemble_generic(u, model, d);
    ([re_mat(&a[0]), re_mat(&a[1]), re_mat(&a[2]), re_mat(&a[3])], rho)
}

pub fn rel_blocks(u: &[f64], model: &EosModel, d: usize) -> FbResult<RelBlocks> {
    if model.eps_c <= 0.0 {
        return Err(FbError::InvalidInput("relativistic blocks need eps_c > 0".into()));
    }
    check_state(u, model, d)?;
    let (b, jac, rho) = rel_blocks_generic(u, model, d);
    model.check_band(rho)?;
    let l = Layout::new(d);
    let v2: f64 = (0..d).map(|i| u[l.v(i)].powi(2)).sum();
    Ok(RelBlocks {
        b: [re_mat(&b[0]), re_mat(&b[1]), re_mat(&b[2]), re_mat(&b[3])],
        jac: re_mat(&jac),
        gamma: 1.0 / (1.0 - model.eps_c * model.eps_c * v2).sqrt(),
    })
}

/// Directional derivative `sum_k dir_k dA_alpha/dU_k` of all matrices.
pub fn assemble_directional(u: &[f64], dir: &[f64], model: &EosModel, d: usize) -> [M8; 4] {
    let n = 2 * d + 2;
    let ud: Vec<Dual<1>> = (0..n).map(|k| Dual { re: u[k], eps: [dir[k]] }).collect();
    let (a, _) = assemble_generic(&ud, model, d);
    let mut out = [M8::zeros(); 4];
    for (o, m) in out.iter_mut().zip(a.iter()) {
        *o = M8::from_fn(|i, j| m[i][j].eps[0]);
    }
    out
}

/// `(A_1 - dt_Phi A_0 - sum_i d_i Phi A_i) / d1_Phi`; `grad_phi[i-2]` holds
/// `d_i Phi` for `i >= 2`.
#[inline]
pub fn lift_matrix(a: &[M8; 4], d: usize, dt_phi: f64, grad_phi: &[f64], d1_phi: f64) -> M8 {
    let mut m = a[1] - a[0] * dt_phi;
    for i in 2..=d {
        m -= a[i] * grad_phi[i - 2];
    }
    m / d1_phi
}

#[derive(Clone, Debug)]
pub struct BoundaryMatrix {
    pub d: usize,
    pub a1_tilde: M8,
    pub inertia: (usize, usize, usize),
}

/// Lifted normal matrix at one point, with its inertia at the default
/// zero tolerance.
pub fn lifted_a1(
    u: &[f64],
    grad_phi: &[f64],
    dt_phi: f64,
    d1_phi: f64,
    model: &EosModel,
    d: usize,
) -> FbResult<BoundaryMatrix> {
    if !(d1_phi >= 0.5) {
        return Err(FbError::DegenerateLifting(d1_phi));
    }
    let m = assemble(u, model, d)?;
    let a1_tilde = lift_matrix(&m.a, d, dt_phi, grad_phi, d1_phi);
    let inertia = inertia_of(&a1_tilde, 2 * d + 2, 1e-10);
    Ok(BoundaryMatrix { d, a1_tilde, inertia })
}

fn inertia_of(m: &M8, n: usize, zero_tol: f64) -> (usize, usize, usize) {
    let scale = crate::state::block(m, n).norm().max(1.0);
    let ev = sym_eigenvalues(m, n);
    let tol = zero_tol * scale;
    let pos = ev.iter().filter(|&&x| x > tol).count();
    let neg = ev.iter().filter(|&&x| x < -tol).count();
    (pos, neg, n - pos - neg)
}

/// Eigenvalue sign counts with `|lambda| < zero_tol * max(1, |M|_F)` counted as zero.
pub fn boundary_inertia(m: &BoundaryMatrix, zero_tol: f64) -> (usize, usize, usize) {
    inertia_of(&m.a1_tilde, 2 * m.d + 2, zero_tol)
}

/// The printed boundary form: off-diagonal `(0, c N^T; c N, 0)` pair, with
/// `c = Gamma` in the relativistic branch and `c = 1` otherwise.
pub fn expected_boundary_form(d: usize, normal: &[f64], gamma: f64) -> M8 {
    let mut m = M8::zeros();
    for i in 0..d {
        m[(0, 1 + i)] = gamma * normal[i];
        m[(1 + i, 0)] = gamma * normal[i];
    }
    m
}

#[derive(Clone, Debug)]
pub struct WTransform {
    pub j_ring: M8,
    /// Transformed matrices; `a_bold[1]` is built from the lifted normal matrix.
    pub a_bold: [M8; 4],
    /// Zero-order coefficient, filled in by the linear solver where jets are known.
    pub a4: Option<M8>,
    pub split: (M8, M8),
}

/// `J` ring: identity except the `v_1` row, which maps `W` back to `V` so that
/// `v . N = W_2` (relativistic: `Gamma v . N = W_2`).
pub fn j_ring(d: usize, grad_phi: &[f64], gamma: f64) -> M8 {
    let mut j = M8::identity();
    j[(1, 1)] = 1.0 / gamma;
    for i in 2..=d {
        j[(1, i)] = grad_phi[i - 2];
    }
    j
}

pub fn a1_constant_part() -> M8 {
    let mut m = M8::zeros();
    m[(0, 1)] = 1.0;
    m[(1, 0)] = 1.0;
    m
}

/// Builds `J`, the transformed matrices and the decomposition of the normal
/// matrix into its constant part and a remainder vanishing on the boundary.
pub fn w_transform(
    u: &[f64],
    grad_phi: &[f64],
    dt_phi: f64,
    d1_phi: f64,
    model: &EosModel,
    d: usize,
) -> FbResult<WTransform> {
    if !(d1_phi >= 0.5) {
        return Err(FbError::DegenerateLifting(d1_phi));
    }
    let m = assemble(u, model, d)?;
    let gamma = if model.eps_c > 0.0 {
        let l = Layout::new(d);
        let v2: f64 = (0..d).map(|i| u[l.v(i)].powi(2)).sum();
        1.0 / (1.0 - model.eps_c * model.eps_c * v2).sqrt()
    } else {
        1.0
    };
    let j = j_ring(d, grad_phi, gamma);
    let a1t = lift_matrix(&m.a, d, dt_phi, grad_phi, d1_phi);
    let jt = j.transpose();
    let a_bold = [jt * m.a[0] * j, jt * a1t * j, jt * m.a[2] * j, jt * m.a[3] * j];
    let c = a1_constant_part();
    let split = (c, a_bold[1] - c);
    Ok(WTransform { j_ring: j, a_bold, a4: None, split })
}

#[derive(Clone, Debug, Serialize)]
pub struct GapTable {
    pub eps: Vec<f64>,
    /// `gaps[k][alpha]` for `eps[k]`.
    pub gaps: Vec<Vec<f64>>,
    /// Least-squares slope of log(total gap) against log(eps) over `eps > 0`.
    pub order: f64,
}

pub fn fit_order(xs: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

pub fn nonrel_limit_gap(u: &[f64], model: &EosModel, d: usize, eps_list: &[f64]) -> FbResult<GapTable> {
    let base = assemble_nonrel(u, &model.with_eps(0.0), d)?;
    let mut gaps = Vec::new();
    let mut totals = Vec::new();
    for &eps in eps_list {
        let rel = assemble_rel(u, &model.with_eps(eps), d)?;
        let g: Vec<f64> = (0..=d).map(|k| (rel.a[k] - base.a[k]).norm()).collect();
        totals.push(g.iter().map(|x| x * x).sum::<f64>().sqrt());
        gaps.push(g);
    }
    Ok(GapTable { eps: eps_list.to_vec(), gaps, order: fit_order(eps_list, &totals) })
}

/// Pointwise jet of the relativistic variables `V = (p, w, H, S)`.
#[derive(Clone, Debug)]
pub struct RelJet {
    pub d: usize,
    pub val: Vec<f64>,
    pub dt: Vec<f64>,
    pub dx: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct RelResiduals {
    /// Mass, energy, momentum (d), induction (d), entropy.
    pub conservative: Vec<f64>,
    /// Size of the individual terms of each conservative equation.
    pub conservative_scale: Vec<f64>,
    pub symmetric: Vec<f64>,
}

impl RelResiduals {
    pub fn conservative_relative(&self) -> f64 {
        self.conservative
            .iter()
            .zip(&self.conservative_scale)
            .map(|(r, s)| if *s > 0.0 { r.abs() / s } else { r.abs() })
            .fold(0.0, f64::max)
    }
}

/// Primary variables `(q, v, H, S)` from `V = (p, w, H, S)`.
pub fn v_to_u<T: Scalar>(vv: &[T], eps_c: f64, d: usize) -> Vec<T> {
    let l = Layout::new(d);
    let e2 = eps_c * eps_c;
    let mut w2 = T::zero();
    for i in 0..d {
        w2 += vv[l.v(i)] * vv[l.v(i)];
    }
    let gam = (w2 * e2 + 1.0).sqrt();
    let v: Vec<T> = (0..d).map(|i| vv[l.v(i)] / gam).collect();
    let mut h2 = T::zero();
    let mut vh = T::zero();
    for i in 0..d {
        h2 += vv[l.h(i)] * vv[l.h(i)];
        vh += v[i] * vv[l.h(i)];
    }
    let gi2 = gam.recip().sq();
    let mut u = vv.to_vec();
    u[0] = vv[0] + (gi2 * h2 + vh * vh * e2) * 0.5;
    for i in 0..d {
        u[l.v(i)] = v[i];
    }
    u
}

pub fn u_to_v(u: &[f64], eps_c: f64, d: usize) -> Vec<f64> {
    let l = Layout::new(d);
    let e2 = eps_c * eps_c;
    let v2: f64 = (0..d).map(|i| u[l.v(i)].powi(2)).sum();
    let h2: f64 = (0..d).map(|i| u[l.h(i)].powi(2)).sum();
    let vh: f64 = (0..d).map(|i| u[l.v(i)] * u[l.h(i)]).sum();
    let gi2 = 1.0 - e2 * v2;
    let mut out = u[..2 * d + 2].to_vec();
    out[0] = u[0] - 0.5 * (gi2 * h2 + e2 * vh * vh);
    for i in 0..d {
        out[l.v(i)] = u[l.v(i)] / gi2.sqrt();
    }
    out
}

/// Conservative fluxes of relativistic MHD: returns (densities, fluxes[j]).
fn conservative_fields<T: Scalar>(vv: &[T], model: &EosModel, d: usize) -> (Vec<T>, Vec<Vec<T>>) {
    let l = Layout::new(d);
    let e2 = model.eps_c * model.eps_c;
    let u = v_to_u(vv, model.eps_c, d);
    let p = vv[0];
    let q = u[0];
    let v: Vec<T> = (0..d).map(|i| u[l.v(i)]).collect();
    let hh: Vec<T> = (0..d).map(|i| u[l.h(i)]).collect();
    let s = u[l.s()];
    let mut w2 = T::zero();
    for i in 0..d {
        w2 += vv[l.v(i)] * vv[l.v(i)];
    }
    let gam = (w2 * e2 + 1.0).sqrt();
    let gi2 = gam.recip().sq();
    let th = model.kind.thermo(p, s);
    let rho = th.rho;
    let enth = T::one() + (th.e + p / rho) * e2;
    let mut h2 = T::zero();
    let mut vh = T::zero();
    for i in 0..d {
        h2 += hh[i] * hh[i];
        vh += v[i] * hh[i];
    }
    let big = rho * enth * gam * gam + h2 * e2;
    let mut dens = Vec::new();
    let mut flux = vec![Vec::new(); d];
    dens.push(rho * gam);
    for j in 0..d {
        flux[j].push(rho * gam * v[j]);
    }
    dens.push(big - q * e2);
    for j in 0..d {
        flux[j].push(big * v[j] - vh * hh[j] * e2);
    }
    for i in 0..d {
        dens.push(big * v[i] - vh * hh[i] * e2);
        for j in 0..d {
            let mut f = -(gi2 * hh[i] * hh[j]) + big * v[i] * v[j] - vh * (hh[i] * v[j] + v[i] * hh[j]) * e2;
            if i == j {
                f += q;
            }
            flux[j].push(f);
        }
    }
    for i in 0..d {
        dens.push(hh[i]);
        for j in 0..d {
            flux[j].push(v[j] * hh[i] - v[i] * hh[j]);
        }
    }
    // entropy in convective form: density S, "flux" handled by the caller
    dens.push(s);
    for j in 0..d {
        flux[j].push(v[j]);
    }
    (dens, flux)
}

/// Conservative-form and symmetric-form residuals for a pointwise jet.
pub fn conservative_residual_rel(jet: &RelJet, model: &EosModel) -> FbResult<RelResiduals> {
    let d = jet.d;
    let n = 2 * d + 2;
    let u = v_to_u(&jet.val, model.eps_c, d);
    check_state(&u, model, d)?;
    // Dual slots: 0 = t, 1..=d = x_j
    let vd: Vec<Dual<4>> = (0..n)
        .map(|c| {
            let mut eps = [0.0; 4];
            eps[0] = jet.dt[c];
            for j in 0..d {
                eps[1 + j] = jet.dx[j][c];
            }
            Dual { re: jet.val[c], eps }
        })
        .collect();
    let (dens, flux) = conservative_fields(&vd, model, d);
    let ne = dens.len();
    let mut res = vec![0.0; ne];
    let mut scale = vec![0.0; ne];
    for e in 0..ne - 1 {
        res[e] = dens[e].eps[0];
        scale[e] = dens[e].eps[0].abs();
        for j in 0..d {
            res[e] += flux[j][e].eps[1 + j];
            scale[e] += flux[j][e].eps[1 + j].abs();
        }
    }
    let e = ne - 1;
    res[e] = dens[e].eps[0];
    scale[e] = dens[e].eps[0].abs();
    for j in 0..d {
        let adv = flux[j][e].re * dens[e].eps[1 + j];
        res[e] += adv;
        scale[e] += adv.abs();
    }

    let blocks = rel_blocks(&u, model, d)?;
    let mut sym = vec![0.0; n];
    for r in 0..n {
        let mut acc = 0.0;
        for c in 0..n {
            acc += blocks.b[0][(r, c)] * jet.dt[c];
            for j in 0..d {
                acc += blocks.b[1 + j][(r, c)] * jet.dx[j][c];
            }
        }
        sym[r] = acc;
    }
    Ok(RelResiduals { conservative: res, conservative_scale: scale, symmetric: sym })
}

/// Solves `B_0 dt V = -sum_j B_j dx_j V` for the time derivative.
pub fn symmetric_time_derivative(val: &[f64], dx: &[Vec<f64>], model: &EosModel, d: usize) -> FbResult<Vec<f64>> {
    let n = 2 * d + 2;
    let u = v_to_u(val, model.eps_c, d);
    let blocks = rel_blocks(&u, model, d)?;
    let b0 = crate::state::block(&blocks.b[0], n);
    let mut rhs = nalgebra::DVector::zeros(n);
    for r in 0..n {
        for c in 0..n {
            for j in 0..d {
                rhs[r] -= blocks.b[1 + j][(r, c)] * dx[j][c];
            }
        }
    }
    let sol = b0
        .cholesky()
        .ok_or_else(|| FbError::InvalidInput("B_0 not positive definite".into()))?
        .solve(&rhs);
    Ok(sol.iter().copied().collect())
}

/// The quadratic form `T6` of the positive-definiteness argument; it is
/// nonnegative whenever `eps_c |v| < 1`.
pub fn t6_form(eps_c: f64, v: &[f64], h: &[f64], u: &[f64]) -> f64 {
    let e2 = eps_c * eps_c;
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
    let v2 = dot(v, v);
    let gi2 = 1.0 - e2 * v2;
    let gi = gi2.sqrt();
    let vu = dot(v, u);
    let u2 = dot(u, u);
    let h2 = dot(h, h);
    let hw: f64 = h.iter().zip(v.iter().zip(u)).map(|(hi, (vi, ui))| hi * (e2 * vu * vi - ui)).sum();
    e2 * gi * (u2 * h2 - e2 * vu * vu * (1.0 + gi2) * h2 - hw * hw)
}

/// Maximum absolute entry over the leading block; used for residual checks.
pub fn max_abs(m: &M8, n: usize) -> f64 {
    let mut mx: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            mx = mx.max(m[(i, j)].abs());
        }
    }
    mx
}

pub const fn nmax() -> usize {
    NMAX
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ustar(d: usize) -> Vec<f64> {
        if d == 3 {
            vec![1.0, 0.1, 0.2, 0.3, 0.5, -0.2, 0.1, 0.0]
        } else {
            vec![1.0, 0.1, 0.2, 0.5, -0.2, 0.0]
        }
    }

    #[test]
    fn trivial_rest_state_is_identity() {
        let u = vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let m = assemble_nonrel(&u, &EosModel::ideal(1.0 + 1e-12).with_eps(0.0), 3);
        // gamma -> 1 gives a = 1 at rho = 1
        let m = m.unwrap();
        for i in 0..8 {
            assert!((m.a[0][(i, i)] - 1.0).abs() < 1e-11);
        }
        // at v = 0, A_i e_0 = e_{v_i}
        for k in 1..=3 {
            let col: Vec<f64> = (0..8).map(|r| m.a[k][(r, 0)]).collect();
            for (r, x) in col.iter().enumerate() {
                assert_eq!(*x, if r == k { 1.0 } else { 0.0 });
            }
            for i in 1..=3 {
                assert_eq!(m.a[k][(i, i)], 0.0);
            }
        }
    }

    #[test]
    fn ustar_positive_definite() {
        let model = EosModel::default();
        let m = assemble_nonrel(&ustar(3), &model, 3).unwrap();
        assert!(sym_eigenvalues(&m.a[0], 8)[0] > 0.0);
        let rel = model.with_eps(0.3);
        let m = assemble_rel(&ustar(3), &rel, 3).unwrap();
        assert!(sym_eigenvalues(&m.a[0], 8)[0] > 0.0);
        let b = rel_blocks(&ustar(3), &rel, 3).unwrap();
        assert!(sym_eigenvalues(&b.b[0], 8)[0] > 0.0);
    }

    #[test]
    fn rest_frame_blocks() {
        let model = EosModel::default().with_eps(0.5);
        let u = vec![1.0, 0.0, 0.0, 0.0, 0.3, -0.4, 0.2, 0.0];
        let b = rel_blocks(&u, &model, 3).unwrap();
        assert!((b.jac.determinant() - 1.0).abs() < 1e-14);
        let p = 1.0 - 0.5 * 0.29;
        let pt = crate::eos::eos_eval(&model, p, 0.0).unwrap();
        let e2 = 0.25;
        let h = [0.3, -0.4, 0.2];
        for i in 0..3 {
            for j in 0..3 {
                let delta = if i == j { 1.0 } else { 0.0 };
                assert!((b.b[0][(4 + i, 4 + j)] - delta).abs() < 1e-15);
                let expect = (pt.rho * pt.h + e2 * 0.29) * delta - e2 * h[i] * h[j];
                assert!((b.b[0][(1 + i, 1 + j)] - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn jacobian_determinant() {
        let model = EosModel::default().with_eps(0.7);
        let u = ustar(3);
        let b = rel_blocks(&u, &model, 3).unwrap();
        assert!((b.jac.determinant() / b.gamma.powi(5) - 1.0).abs() < 1e-12);
        let b = rel_blocks(&ustar(2), &model, 2).unwrap();
        let det = crate::state::block(&b.jac, 6).determinant();
        assert!((det / b.gamma.powi(4) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn jacobian_matches_dual_derivative_of_v() {
        let model = EosModel::default().with_eps(0.6);
        let u = ustar(3);
        let b = rel_blocks(&u, &model, 3).unwrap();
        for k in 0..8 {
            let ud: Vec<Dual<1>> = (0..8).map(|c| Dual { re: u[c], eps: [if c == k { 1.0 } else { 0.0 }] }).collect();
            // V(U) via p = q - (...)/2 and w = Gamma v
            let back = {
                let l = Layout::new(3);
                let e2 = 0.36;
                let v2 = (0..3).fold(Dual::<1>::constant(0.0), |a, i| a + ud[l.v(i)] * ud[l.v(i)]);
                let h2 = (0..3).fold(Dual::<1>::constant(0.0), |a, i| a + ud[l.h(i)] * ud[l.h(i)]);
                let vh = (0..3).fold(Dual::<1>::constant(0.0), |a, i| a + ud[l.v(i)] * ud[l.h(i)]);
                let gi2 = Dual::<1>::constant(1.0) - v2 * e2;
                let mut out = ud.clone();
                out[0] = ud[0] - (gi2 * h2 + vh * vh * e2) * 0.5;
                for i in 0..3 {
                    out[l.v(i)] = ud[l.v(i)] / gi2.sqrt();
                }
                out
            };
            for r in 0..8 {
                assert!((back[r].eps[0] - b.jac[(r, k)]).abs() < 1e-13, "J[{r}][{k}]");
            }
        }
    }

    #[test]
    fn flat_lift_is_a1() {
        let model = EosModel::default();
        let u = vec![1.0, 0.0, 0.2, 0.5, 0.0, 0.3, 0.0];
        let u = &u[..6];
        let m = assemble(u, &model, 2).unwrap();
        let bm = lifted_a1(u, &[0.0], 0.0, 1.0, &model, 2).unwrap();
        assert!((bm.a1_tilde - m.a[1]).norm() == 0.0);
        assert!(matches!(lifted_a1(u, &[0.0], 0.0, 0.4, &model, 2), Err(FbError::DegenerateLifting(_))));
    }

    #[test]
    fn limit_gap_order_two() {
        let t = nonrel_limit_gap(&ustar(3), &EosModel::default(), 3, &[0.2, 0.1, 0.05]).unwrap();
        assert!(t.order >= 1.9, "{}", t.order);
        let z = nonrel_limit_gap(&ustar(3), &EosModel::default(), 3, &[0.0]).unwrap();
        assert!(z.gaps[0].iter().all(|g| *g == 0.0));
    }

    #[test]
    fn limit_gap_at_rest_only_scalar_block() {
        let u = vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.3];
        let model = EosModel::default();
        let base = assemble_nonrel(&u, &model, 3).unwrap();
        let rel = assemble_rel(&u, &model.with_eps(0.1), 3).unwrap();
        let diff = rel.a[0] - base.a[0];
        for i in 0..8 {
            for j in 0..8 {
                let velocity_diag = (1..=3).contains(&i) && i == j;
                if !velocity_diag && (i, j) != (0, 0) {
                    assert_eq!(diff[(i, j)], 0.0, "({i},{j})");
                }
            }
        }
        // velocity block is rho h - rho = rho eps^2 (e + p/rho)
        let pt = crate::eos::eos_eval(&model.with_eps(0.1), 1.0, 0.3).unwrap();
        assert!((diff[(1, 1)] - pt.rho * (pt.h - 1.0)).abs() < 1e-14);
        for k in 1..=3 {
            assert!((rel.a[k] - base.a[k]).norm() < 1e-15);
        }
    }

    #[test]
    fn t6_example_nonnegative() {
        assert!(t6_form(0.9, &[0.5, 0.3, 0.1], &[1.0, -2.0, 0.5], &[0.2, 0.7, -0.4]) >= 0.0);
    }
}
