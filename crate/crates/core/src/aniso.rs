//! Anisotropic Sobolev machinery: the weighted derivative family `D*^alpha`,
//! `H*^m` norms, boundary norms, trace/lift diagnostics and the smoothing
//! family `S_theta`.

use std::collections::BTreeMap;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::error::{FbError, FbResult};
use crate::fd::{diff_axis, AxisKind};
use crate::grid::{l2_weighted, StField};
use crate::interface::{smooth_step, Cutoff};

/// Weight `sigma(x1)`: `x1` on `[0, 1/2]`, 1 on `[1, inf)`, cubic smoothstep
/// blend in between.
pub fn sigma(x1: f64) -> f64 {
    sigma_with_derivative(x1).0
}

pub fn sigma_with_derivative(x1: f64) -> (f64, f64) {
    if x1 <= 0.5 {
        (x1, 1.0)
    } else if x1 >= 1.0 {
        (1.0, 0.0)
    } else {
        let y = 2.0 * (x1 - 0.5);
        let s = y * y * (3.0 - 2.0 * y);
        let ds = 6.0 * y * (1.0 - y) * 2.0;
        ((1.0 - s) * x1 + s, (1.0 - s) + ds * (1.0 - x1))
    }
}

/// `alpha = (a_t, a_sigma, a_2, ..., a_d, a_1)`: exponents of
/// `dt^{a_t} (sigma d1)^{a_sigma} d2^{a_2} ... dd^{a_d} d1^{a_1}`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct MultiIndex {
    pub alpha: Vec<usize>,
}

impl MultiIndex {
    pub fn zero(d: usize) -> Self {
        MultiIndex { alpha: vec![0; d + 2] }
    }
    pub fn d(&self) -> usize {
        self.alpha.len() - 2
    }
    pub fn order(&self) -> usize {
        self.alpha.iter().sum()
    }
    /// `<alpha> = |alpha| + a_1`: plain normal derivatives count twice.
    pub fn weight(&self) -> usize {
        self.order() + self.alpha[self.d() + 1]
    }
    /// All indices with `<alpha> <= m`.
    pub fn enumerate(d: usize, m: usize) -> Vec<MultiIndex> {
        let mut out = Vec::new();
        let mut cur = vec![0; d + 2];
        fn rec(k: usize, budget: usize, cur: &mut Vec<usize>, out: &mut Vec<MultiIndex>) {
            if k == cur.len() {
                out.push(MultiIndex { alpha: cur.clone() });
                return;
            }
            let w = if k == cur.len() - 1 { 2 } else { 1 };
            for c in 0..=budget / w {
                cur[k] = c;
                rec(k + 1, budget - c * w, cur, out);
            }
            cur[k] = 0;
        }
        rec(0, m, &mut cur, &mut out);
        out
    }
}

/// Maximum order accepted without an explicit override.
pub const DEFAULT_MAX_ORDER: usize = 6;

#[derive(Clone, Copy, Debug)]
enum Op {
    Dt,
    /// Time derivative for fields that do not vanish before `t = 0`.
    DtWindow,
    D1,
    SigmaD1,
    Tan(usize),
}

fn apply_op(u: &StField, data: &[f64], op: Op) -> Vec<f64> {
    let dims = u.dims();
    match op {
        Op::Dt => diff_axis(data, &dims, 0, u.dt, AxisKind::Causal),
        Op::DtWindow => diff_axis(data, &dims, 0, u.dt, AxisKind::Bounded),
        Op::D1 => diff_axis(data, &dims, 1, u.grid.h1(), AxisKind::Bounded),
        Op::SigmaD1 => {
            let mut out = diff_axis(data, &dims, 1, u.grid.h1(), AxisKind::Bounded);
            let ntan = u.grid.ntan();
            let per_level = u.level_len();
            for (idx, x) in out.iter_mut().enumerate() {
                let p = (idx % per_level) / u.nc;
                *x *= sigma(u.grid.x1(p / ntan));
            }
            out
        }
        Op::Tan(i) => diff_axis(data, &dims, u.tangential_axis(i), u.grid.ht(), AxisKind::Periodic),
    }
}

fn axis_len(u: &StField, op: Op) -> usize {
    match op {
        Op::Dt | Op::DtWindow => u.n_time,
        Op::D1 | Op::SigmaD1 => u.grid.n1,
        Op::Tan(_) => u.grid.nt,
    }
}

fn gate(u: &StField, ops: &[(Op, usize)], m: usize, max_order: usize) -> FbResult<()> {
    if m > max_order {
        return Err(FbError::OrderExceedsResolution { order: m, detail: format!("configured maximum order is {max_order}") });
    }
    for &(op, w) in ops {
        let need = m / w;
        let len = axis_len(u, op);
        if need > 0 && len > 1 && need + 1 >= len {
            return Err(FbError::OrderExceedsResolution {
                order: m,
                detail: format!("{need} derivatives along an axis with {len} points"),
            });
        }
    }
    Ok(())
}

/// Depth-first evaluation of all composite derivatives within a weight
/// budget, sharing common prefixes. Returns `(counts per op, ||.||^2)`.
fn dfs_norms(u: &StField, ops: &[(Op, usize)], m: usize) -> Vec<(Vec<usize>, f64)> {
    fn rec(
        u: &StField,
        data: Vec<f64>,
        ops: &[(Op, usize)],
        stage: usize,
        budget: usize,
        counts: &mut Vec<usize>,
        out: &mut Vec<(Vec<usize>, f64)>,
    ) {
        if stage == ops.len() {
            let n = l2_weighted(u, &data);
            out.push((counts.clone(), n * n));
            return;
        }
        let (op, w) = ops[stage];
        // a degenerate axis has no derivatives
        let max = if axis_len(u, op) == 1 { 0 } else { budget / w };
        let mut cur = data;
        for c in 0..=max {
            counts[stage] = c;
            let next = if c < max { Some(apply_op(u, &cur, op)) } else { None };
            rec(u, cur, ops, stage + 1, budget - c * w, counts, out);
            match next {
                Some(n) => cur = n,
                None => break,
            }
        }
        counts[stage] = 0;
    }
    let mut out = Vec::new();
    let mut counts = vec![0; ops.len()];
    rec(u, u.data.clone(), ops, 0, m, &mut counts, &mut out);
    out
}

/// Application order of `D*^alpha` read right to left.
fn dstar_ops(u: &StField) -> Vec<(Op, usize)> {
    let mut ops = Vec::new();
    if !u.boundary {
        ops.push((Op::D1, 2));
    }
    for i in 0..u.grid.d - 1 {
        ops.push((Op::Tan(i), 1));
    }
    if !u.boundary {
        ops.push((Op::SigmaD1, 1));
    }
    ops.push((Op::Dt, 1));
    ops
}

fn plain_ops(u: &StField) -> Vec<(Op, usize)> {
    let mut ops = Vec::new();
    if !u.boundary {
        ops.push((Op::D1, 1));
    }
    for i in 0..u.grid.d - 1 {
        ops.push((Op::Tan(i), 1));
    }
    ops.push((Op::Dt, 1));
    ops
}

fn counts_to_alpha(u: &StField, counts: &[usize]) -> MultiIndex {
    let d = u.grid.d;
    let mut alpha = vec![0; d + 2];
    let mut k = 0;
    if !u.boundary {
        alpha[d + 1] = counts[0];
        k = 1;
    }
    for i in 0..d - 1 {
        alpha[2 + i] = counts[k + i];
    }
    k += d - 1;
    if !u.boundary {
        alpha[1] = counts[k];
        k += 1;
    }
    alpha[0] = counts[k];
    MultiIndex { alpha }
}

/// `D*^alpha u` in the defining order.
pub fn dstar(u: &StField, alpha: &MultiIndex) -> FbResult<StField> {
    let d = u.grid.d;
    if alpha.d() != d {
        return Err(FbError::InvalidInput("multi-index dimension mismatch".into()));
    }
    if u.boundary && (alpha.alpha[1] > 0 || alpha.alpha[d + 1] > 0) {
        return Err(FbError::InvalidInput("normal derivatives of a boundary field".into()));
    }
    let mut seq = Vec::new();
    seq.push((Op::D1, alpha.alpha[d + 1]));
    for i in 0..d - 1 {
        seq.push((Op::Tan(i), alpha.alpha[2 + i]));
    }
    seq.push((Op::SigmaD1, alpha.alpha[1]));
    seq.push((Op::Dt, alpha.alpha[0]));
    apply_sequence(u, &seq, alpha.weight())
}

/// Reordered form `sigma^{a_s} d1^{a_s + a_1} dt^{a_t} d'^{a'}` used to
/// measure the norm equivalence of operator orderings.
pub fn dstar_reordered(u: &StField, alpha: &MultiIndex) -> FbResult<StField> {
    let d = u.grid.d;
    let mut seq = Vec::new();
    for i in 0..d - 1 {
        seq.push((Op::Tan(i), alpha.alpha[2 + i]));
    }
    seq.push((Op::Dt, alpha.alpha[0]));
    seq.push((Op::D1, alpha.alpha[1] + alpha.alpha[d + 1]));
    let mut out = apply_sequence(u, &seq, alpha.weight())?;
    if alpha.alpha[1] > 0 {
        let ntan = u.grid.ntan();
        let per_level = u.level_len();
        for (idx, x) in out.data.iter_mut().enumerate() {
            let p = (idx % per_level) / u.nc;
            *x *= sigma(u.grid.x1(p / ntan)).powi(alpha.alpha[1] as i32);
        }
    }
    Ok(out)
}

fn apply_sequence(u: &StField, seq: &[(Op, usize)], weight: usize) -> FbResult<StField> {
    for &(op, c) in seq {
        let len = axis_len(u, op);
        if c > 0 && len > 1 && c + 1 >= len {
            return Err(FbError::OrderExceedsResolution { order: weight, detail: format!("{c} derivatives on {len} points") });
        }
    }
    let mut data = u.data.clone();
    for &(op, c) in seq {
        if axis_len(u, op) == 1 {
            if c > 0 {
                data.iter_mut().for_each(|x| *x = 0.0);
            }
            continue;
        }
        for _ in 0..c {
            data = apply_op(u, &data, op);
        }
    }
    Ok(StField { data, ..u.clone() })
}

#[derive(Clone, Debug, Serialize)]
pub struct AnisoNorm {
    pub m: usize,
    pub value: f64,
    pub breakdown: Vec<(MultiIndex, f64)>,
}

pub fn aniso_norm(u: &StField, m: usize) -> FbResult<AnisoNorm> {
    aniso_norm_with(u, m, DEFAULT_MAX_ORDER)
}

/// `||u||_{m,*}` with an explicit maximum order.
pub fn aniso_norm_with(u: &StField, m: usize, max_order: usize) -> FbResult<AnisoNorm> {
    let ops = dstar_ops(u);
    gate(u, &ops, m, max_order)?;
    let terms = dfs_norms(u, &ops, m);
    let mut breakdown: Vec<(MultiIndex, f64)> =
        terms.into_iter().map(|(c, v)| (counts_to_alpha(u, &c), v.sqrt())).collect();
    breakdown.sort_by(|a, b| a.0.cmp(&b.0));
    let value = breakdown.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
    Ok(AnisoNorm { m, value, breakdown })
}

/// Like [`aniso_norm_with`] for fields that are not zero in the past (basic
/// states): time differences are one-sided at both ends of the window.
pub fn aniso_norm_window(u: &StField, m: usize, max_order: usize) -> FbResult<AnisoNorm> {
    let ops: Vec<(Op, usize)> =
        dstar_ops(u).into_iter().map(|(op, w)| (if matches!(op, Op::Dt) { Op::DtWindow } else { op }, w)).collect();
    gate(u, &ops, m, max_order)?;
    let terms = dfs_norms(u, &ops, m);
    let mut breakdown: Vec<(MultiIndex, f64)> =
        terms.into_iter().map(|(c, v)| (counts_to_alpha(u, &c), v.sqrt())).collect();
    breakdown.sort_by(|a, b| a.0.cmp(&b.0));
    let value = breakdown.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
    Ok(AnisoNorm { m, value, breakdown })
}

/// Norms `||u||_{s,*}` for every `s <= m` from a single traversal.
pub fn aniso_ladder(u: &StField, m: usize) -> FbResult<Vec<f64>> {
    let n = aniso_norm_with(u, m, m.max(DEFAULT_MAX_ORDER))?;
    let mut sums = vec![0.0; m + 1];
    for (a, v) in &n.breakdown {
        for s in a.weight()..=m {
            sums[s] += v * v;
        }
    }
    Ok(sums.into_iter().map(f64::sqrt).collect())
}

/// Standard isotropic `H^m` norm over all space-time axes of the field.
pub fn sobolev_norm(u: &StField, m: usize) -> FbResult<f64> {
    let ops = plain_ops(u);
    gate(u, &ops, m, 2 * DEFAULT_MAX_ORDER)?;
    Ok(dfs_norms(u, &ops, m).iter().map(|(_, v)| v).sum::<f64>().sqrt())
}

/// Restriction of a volume field to `x1 = 0` as a boundary field.
pub fn boundary_slice(u: &StField) -> StField {
    let mut out = StField::zeros(u.grid, u.n_time, u.dt, u.nc, true);
    let n = u.grid.ntan() * u.nc;
    for k in 0..u.n_time {
        out.level_mut(k).copy_from_slice(&u.level(k)[..n]);
    }
    out
}

/// `H^m(Sigma_T)` norm of the trace.
pub fn trace_norm(u: &StField, m: usize) -> FbResult<f64> {
    if m < 1 {
        return Err(FbError::InvalidInput("trace norm needs m >= 1".into()));
    }
    sobolev_norm(&boundary_slice(u), m)
}

/// Lift `w(t, x') chi(x1)` of a boundary field.
pub fn lift_from_boundary(w: &StField, cutoff: &Cutoff) -> StField {
    let g = w.grid;
    let mut out = StField::zeros(g, w.n_time, w.dt, w.nc, false);
    let ntan = g.ntan();
    let chi: Vec<f64> = (0..g.n1).map(|i| cutoff.eval(g.x1(i))[0]).collect();
    for k in 0..w.n_time {
        let src = w.level(k).to_vec();
        let dst = out.level_mut(k);
        for i1 in 0..g.n1 {
            if chi[i1] == 0.0 {
                continue;
            }
            for jt in 0..ntan {
                for c in 0..w.nc {
                    dst[(i1 * ntan + jt) * w.nc + c] = chi[i1] * src[jt * w.nc + c];
                }
            }
        }
    }
    out
}

/// Smoothing operator `S_theta`.
///
/// Radial spectral cutoff `m(|xi|/theta)` (one below `|xi| = theta`, zero
/// above `2 theta`, frequencies in cycles per unit) applied to the even
/// extension across `t = 0, T` and `x1 = 0, L` and periodically in `x'`,
/// followed by the smooth causal ramp `s(theta t)` that restores vanishing
/// in the past. Both factors lie in `[0, 1]`, so `S_theta` contracts the
/// trapezoidal `L^2` norm exactly.
#[derive(Clone, Copy, Debug)]
pub struct Smoother {
    pub theta: f64,
}

pub fn spectral_symbol(r: f64) -> f64 {
    1.0 - smooth_step(r - 1.0)[0]
}

fn fft_axis(buf: &mut [Complex64], dims: &[usize], axis: usize, inverse: bool, planner: &mut FftPlanner<f64>) {
    let len = dims[axis];
    if len <= 1 {
        return;
    }
    let inner: usize = dims[axis + 1..].iter().product();
    let outer: usize = dims[..axis].iter().product();
    let fft = if inverse { planner.plan_fft_inverse(len) } else { planner.plan_fft_forward(len) };
    let mut line = vec![Complex64::new(0.0, 0.0); len];
    for o in 0..outer {
        for k in 0..inner {
            let base = o * len * inner + k;
            for i in 0..len {
                line[i] = buf[base + i * inner];
            }
            fft.process(&mut line);
            for i in 0..len {
                buf[base + i * inner] = line[i];
            }
        }
    }
}

impl Smoother {
    pub fn new(theta: f64) -> Self {
        Smoother { theta }
    }

    pub fn apply(&self, u: &StField) -> StField {
        if self.theta.is_infinite() {
            return u.clone();
        }
        let dims = u.dims();
        let naxes = dims.len() - 1;
        // (even-extended?, spacing) per transformed axis
        let mut axes: Vec<(bool, f64)> = vec![(true, u.dt)];
        if !u.boundary {
            axes.push((true, u.grid.h1()));
        }
        for _ in 0..u.grid.d - 1 {
            axes.push((false, u.grid.ht()));
        }
        let ext: Vec<usize> = (0..naxes)
            .map(|a| if axes[a].0 && dims[a] > 1 { 2 * (dims[a] - 1) } else { dims[a] })
            .chain(std::iter::once(u.nc))
            .collect();
        let total: usize = ext.iter().product();
        let mut buf = vec![Complex64::new(0.0, 0.0); total];
        // strides
        let stride = |d: &[usize]| {
            let mut s = vec![1; d.len()];
            for a in (0..d.len() - 1).rev() {
                s[a] = s[a + 1] * d[a + 1];
            }
            s
        };
        let es = stride(&ext);
        let os = stride(&dims);
        let fold = |j: usize, n: usize, n_ext: usize| if n_ext == n { j } else if j < n { j } else { n_ext - j };
        let mut idx = vec![0usize; ext.len()];
        for (lin, b) in buf.iter_mut().enumerate() {
            let mut rem = lin;
            for a in 0..ext.len() {
                idx[a] = rem / es[a];
                rem %= es[a];
            }
            let mut src = 0;
            for a in 0..ext.len() {
                src += fold(idx[a], dims[a], ext[a]) * os[a];
            }
            *b = Complex64::new(u.data[src], 0.0);
        }
        let mut planner = FftPlanner::new();
        for a in 0..naxes {
            fft_axis(&mut buf, &ext, a, false, &mut planner);
        }
        // radial symbol
        let freq = |a: usize, j: usize| {
            let n = ext[a];
            let k = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
            k / (n as f64 * axes[a].1)
        };
        let freqs: Vec<Vec<f64>> = (0..naxes).map(|a| (0..ext[a]).map(|j| freq(a, j)).collect()).collect();
        for (lin, b) in buf.iter_mut().enumerate() {
            let mut rem = lin;
            let mut r2 = 0.0;
            for a in 0..naxes {
                let j = rem / es[a];
                rem %= es[a];
                r2 += freqs[a][j] * freqs[a][j];
            }
            *b *= spectral_symbol(r2.sqrt() / self.theta) / total as f64 * u.nc as f64;
        }
        for a in 0..naxes {
            fft_axis(&mut buf, &ext, a, true, &mut planner);
        }
        let mut out = u.clone();
        let mut oidx = vec![0usize; dims.len()];
        for (lin, o) in out.data.iter_mut().enumerate() {
            let mut rem = lin;
            for a in 0..dims.len() {
                oidx[a] = rem / os[a];
                rem %= os[a];
            }
            let src: usize = (0..dims.len()).map(|a| oidx[a] * es[a]).sum();
            *o = buf[src].re;
        }
        if u.n_time > 1 {
            let n = u.level_len();
            for k in 0..u.n_time {
                let ramp = smooth_step(self.theta * u.time(k))[0];
                out.data[k * n..(k + 1) * n].iter_mut().for_each(|x| *x *= ramp);
            }
        }
        out
    }
}

pub fn smooth(u: &StField, theta: f64) -> StField {
    Smoother::new(theta).apply(u)
}

/// Which norm family a report uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum NormKind {
    /// `H*^k` for volume fields.
    Aniso,
    /// `H^k(Sigma_T)` for boundary fields.
    Boundary,
}

fn norm_of(u: &StField, k: usize) -> FbResult<f64> {
    if u.boundary {
        sobolev_norm(u, k)
    } else {
        Ok(aniso_norm_with(u, k, k.max(DEFAULT_MAX_ORDER))?.value)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct InequalityRow {
    pub k: usize,
    pub j: usize,
    pub constants: Vec<f64>,
    pub c_max: f64,
    /// `C(theta_last)/C(theta_first) > theta_last/theta_first`.
    pub blowup: bool,
    pub vacuous: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SmoothingReport {
    pub norm: NormKind,
    pub thetas: Vec<f64>,
    /// Boundedness `||S u||_k <= C theta^{(k-j)+} ||u||_j`.
    pub p1a: Vec<InequalityRow>,
    /// Approximation `||S u - u||_k <= C theta^{k-j} ||u||_j`, `k <= j`.
    pub p1b: Vec<InequalityRow>,
    /// Theta derivative `||d/dtheta S u||_k <= C theta^{k-j-1} ||u||_j`.
    pub p1c: Vec<InequalityRow>,
}

impl SmoothingReport {
    pub fn bounded(&self) -> bool {
        self.p1a.iter().chain(&self.p1b).chain(&self.p1c).all(|r| r.vacuous || (!r.blowup && r.c_max.is_finite()))
    }
}

fn row(k: usize, j: usize, thetas: &[f64], vals: Vec<f64>, denom: f64) -> InequalityRow {
    if denom == 0.0 {
        return InequalityRow { k, j, constants: vec![0.0; vals.len()], c_max: 0.0, blowup: false, vacuous: true };
    }
    let constants: Vec<f64> = vals.iter().map(|v| v / denom).collect();
    let c_max = constants.iter().copied().fold(0.0, f64::max);
    let first = constants[0];
    let last = *constants.last().unwrap();
    let blowup = first > 0.0 && last / first > thetas[thetas.len() - 1] / thetas[0];
    InequalityRow { k, j, constants, c_max, blowup, vacuous: false }
}

/// Measured constants of the three smoothing inequalities for each `(k, j)`.
pub fn smoothing_inequalities_report(u: &StField, thetas: &[f64], pairs: &[(usize, usize)]) -> FbResult<SmoothingReport> {
    let kind = if u.boundary { NormKind::Boundary } else { NormKind::Aniso };
    let mut cache: BTreeMap<usize, f64> = BTreeMap::new();
    let mut unorm = |j: usize| -> FbResult<f64> {
        if let Some(v) = cache.get(&j) {
            return Ok(*v);
        }
        let v = norm_of(u, j)?;
        cache.insert(j, v);
        Ok(v)
    };
    let (mut p1a, mut p1b, mut p1c) = (Vec::new(), Vec::new(), Vec::new());
    let smoothed: Vec<StField> = thetas.iter().map(|&t| smooth(u, t)).collect();
    for &(k, j) in pairs {
        let uj = unorm(j)?;
        let mut va = Vec::new();
        let mut vb = Vec::new();
        let mut vc = Vec::new();
        for (ti, &th) in thetas.iter().enumerate() {
            let su = &smoothed[ti];
            let gain = th.powi(k as i32 - j as i32);
            va.push(norm_of(su, k)? / th.powi((k as i32 - j as i32).max(0)));
            if k <= j {
                let mut diff = su.clone();
                diff.axpy(-1.0, u);
                vb.push(norm_of(&diff, k)? / gain);
            }
            let dth = 1e-3 * th;
            let mut der = smooth(u, th + dth);
            der.axpy(-1.0, &smooth(u, th - dth));
            der.data.iter_mut().for_each(|x| *x /= 2.0 * dth);
            vc.push(norm_of(&der, k)? / (gain / th));
        }
        p1a.push(row(k, j, thetas, va, uj));
        if k <= j {
            p1b.push(row(k, j, thetas, vb, uj));
        }
        p1c.push(row(k, j, thetas, vc, uj));
    }
    Ok(SmoothingReport { norm: kind, thetas: thetas.to_vec(), p1a, p1b, p1c })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use std::f64::consts::PI;

    #[test]
    fn sigma_values() {
        assert_eq!(sigma(0.25), 0.25);
        assert_eq!(sigma(2.0), 1.0);
        let s = sigma(0.7);
        assert!(s > 0.5 && s < 1.0);
        let mut prev = 0.0;
        for k in 0..=1000 {
            let x = 1.2 * k as f64 / 1000.0;
            let (s, ds) = sigma_with_derivative(x);
            assert!(s >= prev && ds >= 0.0);
            prev = s;
        }
    }

    #[test]
    fn multi_index_counts() {
        let all = MultiIndex::enumerate(2, 6);
        // weights (1,1,1,2) over four slots
        assert_eq!(all.len(), 84 + 35 + 10 + 1);
        assert!(all.iter().all(|a| a.weight() <= 6));
    }

    fn spatial(g: Grid, f: impl Fn([f64; 3]) -> f64 + Sync) -> StField {
        let mut u = StField::zeros(g, 1, 1.0, 1, false);
        u.data = g.sample(1, |x, o| o[0] = f(x));
        u
    }

    #[test]
    fn dstar_examples() {
        let g = Grid::new(2, 81, 32, 2.0).unwrap();
        let u = spatial(g, |x| sigma(x[0]) * (2.0 * PI * x[1]).sin());
        let a0 = MultiIndex::zero(2);
        assert_eq!(dstar(&u, &a0).unwrap().data, u.data);
        let mut a = MultiIndex::zero(2);
        a.alpha[1] = 1;
        let r = dstar(&u, &a).unwrap();
        for p in 0..g.np() {
            let x = g.coords(p);
            let (s, ds) = sigma_with_derivative(x[0]);
            // sigma is only C^1 at the blend ends; compare away from them
            if (x[0] - 0.5).abs() > 0.1 && (x[0] - 1.0).abs() > 0.1 {
                assert!((r.data[p] - s * ds * (2.0 * PI * x[1]).sin()).abs() < 1e-4, "{x:?}");
            }
        }
        let u = spatial(g, |x| (2.0 * PI * x[1]).sin() * (-x[0]).exp());
        let mut a = MultiIndex::zero(2);
        a.alpha[2] = 2;
        let n = dstar(&u, &a).unwrap().l2();
        assert!((n / u.l2() - (2.0 * PI).powi(2)).abs() / (2.0 * PI).powi(2) < 1e-3);
    }

    #[test]
    fn norm_trivial_cases() {
        let g = Grid::new(2, 9, 8, 1.0).unwrap();
        let mut u = StField::zeros(g, 1, 1.0, 1, false);
        assert_eq!(aniso_norm(&u, 3).unwrap().value, 0.0);
        u.data.iter_mut().for_each(|x| *x = 1.0);
        assert!((aniso_norm(&u, 2).unwrap().value - 1.0).abs() < 1e-12);
        assert!(matches!(aniso_norm(&u, 7), Err(FbError::OrderExceedsResolution { .. })));
    }

    #[test]
    fn smoothing_exact_cases() {
        let g = Grid::new(2, 9, 32, 1.0).unwrap();
        let u = spatial(g, |x| (2.0 * PI * 3.0 * x[1]).sin());
        let s = smooth(&u, f64::INFINITY);
        assert_eq!(s.data, u.data);
        let keep = smooth(&u, 4.0);
        assert!(keep.data.iter().zip(&u.data).all(|(a, b)| (a - b).abs() < 1e-12));
        let kill = smooth(&u, 1.4);
        assert!(kill.max_abs() < 1e-12);
    }
}
