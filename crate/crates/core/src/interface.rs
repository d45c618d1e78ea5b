//! Front function, lifting `Phi = x1 + chi(x1) phi`, lifted derivatives and
//! the constraint / stability monitors.

use crate::error::{FbError, FbResult};
use crate::fd::{diff_axis, AxisKind};
use crate::grid::Grid;

/// Steepness of the transition `1/(1 + exp(a (1/y - 1/(1-y))))`; `a = 0.6`
/// minimizes the peak slope (about 1.49 on the unit interval).
const RAMP_STEEPNESS: f64 = 0.6;

/// Smooth transition from 0 at `y <= 0` to 1 at `y >= 1` with its first two
/// derivatives.
pub fn smooth_step(y: f64) -> [f64; 3] {
    if y <= 0.0 {
        return [0.0, 0.0, 0.0];
    }
    if y >= 1.0 {
        return [1.0, 0.0, 0.0];
    }
    let a = RAMP_STEEPNESS;
    let g = a * (1.0 / y - 1.0 / (1.0 - y));
    let g1 = -a / (y * y) - a / ((1.0 - y) * (1.0 - y));
    let g2 = 2.0 * a / (y * y * y) - 2.0 * a / ((1.0 - y).powi(3));
    let psi = if g > 0.0 {
        let e = (-g).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + g.exp())
    };
    let s = psi * (1.0 - psi);
    let d1 = -s * g1;
    let d2 = -d1 * (1.0 - 2.0 * psi) * g1 - s * g2;
    [psi, d1, d2]
}

/// Cutoff `chi`: identically one on `[0, 1]`, zero beyond `support`, with a
/// C-infinity monotone ramp in between.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cutoff {
    pub support: f64,
    /// Measured `max |chi'|` on the sampling used at construction.
    pub max_slope: f64,
}

impl Cutoff {
    /// `(chi, chi', chi'')` at `x1`.
    pub fn eval(&self, x1: f64) -> [f64; 3] {
        let w = self.support - 1.0;
        let [s, s1, s2] = smooth_step((x1 - 1.0) / w);
        [1.0 - s, -s1 / w, -s2 / (w * w)]
    }
}

pub fn build_chi(support: f64, resolution: usize) -> FbResult<Cutoff> {
    if !(support > 1.0) {
        return Err(FbError::ProfileInfeasible(f64::INFINITY));
    }
    let n = resolution.max(16);
    let mut max_slope: f64 = 0.0;
    for k in 0..=n {
        let x = 1.0 + (support - 1.0) * k as f64 / n as f64;
        max_slope = max_slope.max(Cutoff { support, max_slope: 0.0 }.eval(x)[1].abs());
    }
    if max_slope >= 1.0 {
        return Err(FbError::ProfileInfeasible(max_slope));
    }
    Ok(Cutoff { support, max_slope })
}

impl Default for Cutoff {
    fn default() -> Self {
        build_chi(3.0, 4096).expect("support 3 is feasible")
    }
}

/// Front `phi(t, x')` on the tangential torus and its time derivative.
#[derive(Clone, Debug, PartialEq)]
pub struct InterfaceState {
    pub phi: Vec<f64>,
    pub dt_phi: Vec<f64>,
}

impl InterfaceState {
    pub fn flat(grid: &Grid) -> Self {
        InterfaceState { phi: vec![0.0; grid.ntan()], dt_phi: vec![0.0; grid.ntan()] }
    }
    /// Normal `N = (1, -d2 phi, ..., -dd phi)` per boundary point.
    pub fn normal(&self, grid: &Grid) -> Vec<[f64; 3]> {
        let grads: Vec<Vec<f64>> = (0..grid.d - 1).map(|i| grid.dtan_boundary(&self.phi, 1, i)).collect();
        (0..grid.ntan())
            .map(|jt| {
                let mut n = [1.0, 0.0, 0.0];
                for i in 0..grid.d - 1 {
                    n[1 + i] = -grads[i][jt];
                }
                n
            })
            .collect()
    }
}

/// Lifting data on the half-space grid at one time.
///
/// Tangential derivatives of `phi` are discrete; `chi` is evaluated in
/// closed form.
#[derive(Clone, Debug)]
pub struct Lifting {
    pub grid: Grid,
    pub cutoff: Cutoff,
    /// `(chi, chi', chi'')` per `x1` index.
    pub chi: Vec<[f64; 3]>,
    pub phi: Vec<f64>,
    pub dt_phi: Vec<f64>,
    /// `d_i phi` and `d_i dt phi` for tangential `i`, boundary layout.
    pub dphi: Vec<Vec<f64>>,
    pub ddt_phi: Vec<Vec<f64>>,
    /// `d_i d_j phi`, index `[i][j]`.
    pub ddphi: Vec<Vec<Vec<f64>>>,
}

impl Lifting {
    pub fn ntan(&self) -> usize {
        self.grid.ntan()
    }
    fn split(&self, p: usize) -> (usize, usize) {
        (p / self.ntan(), p % self.ntan())
    }
    pub fn big_phi(&self, p: usize) -> f64 {
        let (i1, jt) = self.split(p);
        self.grid.x1(i1) + self.chi[i1][0] * self.phi[jt]
    }
    pub fn d1(&self, p: usize) -> f64 {
        let (i1, jt) = self.split(p);
        1.0 + self.chi[i1][1] * self.phi[jt]
    }
    pub fn dt(&self, p: usize) -> f64 {
        let (i1, jt) = self.split(p);
        self.chi[i1][0] * self.dt_phi[jt]
    }
    /// `d_i Phi` for tangential direction `i` (0 for x2).
    pub fn dtan(&self, p: usize, i: usize) -> f64 {
        let (i1, jt) = self.split(p);
        self.chi[i1][0] * self.dphi[i][jt]
    }
    pub fn d11(&self, p: usize) -> f64 {
        let (i1, jt) = self.split(p);
        self.chi[i1][2] * self.phi[jt]
    }
    pub fn d1tan(&self, p: usize, i: usize) -> f64 {
        let (i1, jt) = self.split(p);
        self.chi[i1][1] * self.dphi[i][jt]
    }
    pub fn dt1(&self, p: usize) -> f64 {
        let (i1, jt) = self.split(p);
        self.chi[i1][1] * self.dt_phi[jt]
    }
    pub fn dttan(&self, p: usize, i: usize) -> f64 {
        let (i1, jt) = self.split(p);
        self.chi[i1][0] * self.ddt_phi[i][jt]
    }
    pub fn dtantan(&self, p: usize, i: usize, j: usize) -> f64 {
        let (i1, jt) = self.split(p);
        self.chi[i1][0] * self.ddphi[i][j][jt]
    }
    pub fn min_d1(&self) -> f64 {
        (0..self.grid.np()).map(|p| self.d1(p)).fold(f64::INFINITY, f64::min)
    }
}

pub fn lift(state: &InterfaceState, grid: &Grid, cutoff: &Cutoff) -> FbResult<Lifting> {
    let sup = state.phi.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if sup > 0.5 {
        return Err(FbError::AdmissibilityViolation { quantity: "sup |phi|", value: sup, lo: -0.5, hi: 0.5 });
    }
    let chi = (0..grid.n1).map(|i| cutoff.eval(grid.x1(i))).collect();
    let nt = grid.d - 1;
    let dphi: Vec<Vec<f64>> = (0..nt).map(|i| grid.dtan_boundary(&state.phi, 1, i)).collect();
    let ddt_phi = (0..nt).map(|i| grid.dtan_boundary(&state.dt_phi, 1, i)).collect();
    let ddphi = (0..nt).map(|i| (0..nt).map(|j| grid.dtan_boundary(&dphi[i], 1, j)).collect()).collect();
    Ok(Lifting {
        grid: *grid,
        cutoff: *cutoff,
        chi,
        phi: state.phi.clone(),
        dt_phi: state.dt_phi.clone(),
        dphi,
        ddt_phi,
        ddphi,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    T,
    X1,
    /// Tangential direction (0 for x2, 1 for x3).
    Tan(usize),
}

/// Lifted derivative `d_alpha^Phi` of an `nc`-component field. The time
/// direction needs the plain time derivative `dt_f`.
pub fn lifted_derivative(
    f: &[f64],
    nc: usize,
    dt_f: Option<&[f64]>,
    lifting: &Lifting,
    dir: Direction,
) -> FbResult<Vec<f64>> {
    let g = &lifting.grid;
    let min = lifting.min_d1();
    if min < 0.5 {
        return Err(FbError::DegenerateLifting(min));
    }
    let f1 = g.d1(f, nc);
    let mut out = vec![0.0; f.len()];
    match dir {
        Direction::X1 => {
            for p in 0..g.np() {
                let s = 1.0 / lifting.d1(p);
                for c in 0..nc {
                    out[p * nc + c] = f1[p * nc + c] * s;
                }
            }
        }
        Direction::Tan(i) => {
            let fi = g.dtan(f, nc, i);
            for p in 0..g.np() {
                let s = lifting.dtan(p, i) / lifting.d1(p);
                for c in 0..nc {
                    out[p * nc + c] = fi[p * nc + c] - s * f1[p * nc + c];
                }
            }
        }
        Direction::T => {
            let ft = dt_f.ok_or_else(|| FbError::InvalidInput("time derivative required".into()))?;
            for p in 0..g.np() {
                let s = lifting.dt(p) / lifting.d1(p);
                for c in 0..nc {
                    out[p * nc + c] = ft[p * nc + c] - s * f1[p * nc + c];
                }
            }
        }
    }
    Ok(out)
}

/// Normal trace `H_N` on the boundary and the field `div^Phi H`, both from
/// the conservative form
/// `d1Phi div^Phi H = D1(H_1 - sum d_i Phi H_i) + sum D_i(d1Phi H_i)`.
/// `h_offset` is the index of `H_1` inside each `nc`-block.
pub fn constraints(u: &[f64], nc: usize, h_offset: usize, lifting: &Lifting) -> (Vec<f64>, Vec<f64>) {
    let g = &lifting.grid;
    let d = g.d;
    let np = g.np();
    let mut normal_flux = vec![0.0; np];
    let mut tang_flux: Vec<Vec<f64>> = vec![vec![0.0; np]; d - 1];
    for p in 0..np {
        let h = &u[p * nc + h_offset..p * nc + h_offset + d];
        let mut f1 = h[0];
        for i in 0..d - 1 {
            f1 -= lifting.dtan(p, i) * h[1 + i];
            tang_flux[i][p] = lifting.d1(p) * h[1 + i];
        }
        normal_flux[p] = f1;
    }
    let mut div = g.d1(&normal_flux, 1);
    for (i, tf) in tang_flux.iter().enumerate() {
        let di = g.dtan(tf, 1, i);
        for p in 0..np {
            div[p] += di[p];
        }
    }
    for (p, x) in div.iter_mut().enumerate() {
        *x /= lifting.d1(p);
    }
    (normal_flux[..g.ntan()].to_vec(), div)
}

/// Rayleigh-Taylor monitor: minimum over the boundary of the one-sided
/// discrete `d1 q`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RtMargin {
    pub margin: f64,
    pub argmin: usize,
    pub satisfied: bool,
}

pub fn rayleigh_taylor_margin(grid: &Grid, f: &[f64], nc: usize, comp: usize) -> RtMargin {
    let ntan = grid.ntan();
    let h = grid.h1();
    let w = [-11.0 / 6.0, 3.0, -1.5, 1.0 / 3.0];
    let mut best = (f64::INFINITY, 0);
    for jt in 0..ntan {
        let mut s = 0.0;
        for (k, wk) in w.iter().enumerate() {
            s += wk * f[(k * ntan + jt) * nc + comp];
        }
        let d = s / h;
        if d < best.0 {
            best = (d, jt);
        }
    }
    RtMargin { margin: best.0, argmin: best.1, satisfied: best.0 > 0.0 }
}

/// Magnetic field whose conservative discrete `div^Phi` vanishes to rounding.
///
/// `potential` has one component for d = 2 (scalar `A`) and three for d = 3
/// (vector `A`). The conservative fluxes are set to the discrete curl of `A`;
/// `H_N` vanishes when the tangential derivatives of the normal flux vanish
/// on the boundary, e.g. when `A` (or `A_2, A_3`) vanishes at `x1 = 0`.
pub fn divergence_free_init(potential: &[f64], lifting: &Lifting) -> Vec<f64> {
    let g = &lifting.grid;
    let d = g.d;
    let np = g.np();
    let mut flux: Vec<Vec<f64>> = vec![vec![0.0; np]; d];
    if d == 2 {
        flux[0] = g.dtan(potential, 1, 0);
        flux[1] = g.d1(potential, 1).iter().map(|x| -x).collect();
    } else {
        let comp = |c: usize| potential.iter().skip(c).step_by(3).copied().collect::<Vec<f64>>();
        let (a1, a2, a3) = (comp(0), comp(1), comp(2));
        let d2a3 = g.dtan(&a3, 1, 0);
        let d3a2 = g.dtan(&a2, 1, 1);
        let d3a1 = g.dtan(&a1, 1, 1);
        let d1a3 = g.d1(&a3, 1);
        let d1a2 = g.d1(&a2, 1);
        let d2a1 = g.dtan(&a1, 1, 0);
        for p in 0..np {
            flux[0][p] = d2a3[p] - d3a2[p];
            flux[1][p] = d3a1[p] - d1a3[p];
            flux[2][p] = d1a2[p] - d2a1[p];
        }
    }
    let mut h = vec![0.0; np * d];
    for p in 0..np {
        let d1 = lifting.d1(p);
        let mut h1 = flux[0][p];
        for i in 0..d - 1 {
            let hi = flux[1 + i][p] / d1;
            h[p * d + 1 + i] = hi;
            h1 += lifting.dtan(p, i) * hi;
        }
        h[p * d] = h1;
    }
    h
}

/// Scalar potential `amp * sigma(x1)^2 * sin(2 pi k x2)` (d = 2) or the
/// vector potential `(0, 0, same)` (d = 3).
pub fn sine_potential(grid: &Grid, amp: f64, k: f64) -> Vec<f64> {
    let nc = if grid.d == 2 { 1 } else { 3 };
    grid.sample(nc, |x, o| {
        let s = crate::aniso::sigma(x[0]);
        o[nc - 1] = amp * s * s * (2.0 * std::f64::consts::PI * k * x[1]).sin();
    })
}

/// Time derivative of a sequence of boundary snapshots (used by tests).
pub fn dt_levels(levels: &[f64], ntan: usize, dt: f64) -> Vec<f64> {
    let n = levels.len() / ntan;
    diff_axis(levels, &[n, ntan], 0, dt, AxisKind::Bounded)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cutoff_properties() {
        let c = build_chi(3.0, 20_000).unwrap();
        assert_eq!(c.eval(0.5)[0], 1.0);
        assert_eq!(c.eval(1.0)[0], 1.0);
        assert_eq!(c.eval(3.0)[0], 0.0);
        assert_eq!(c.eval(3.5)[0], 0.0);
        assert!(c.max_slope < 0.76 && c.max_slope > 0.7, "{}", c.max_slope);
        assert!(matches!(build_chi(2.3, 2000), Err(FbError::ProfileInfeasible(_))));
        assert!(build_chi(2.6, 2000).is_ok());
        // derivatives agree with central differences
        for &x in &[1.3, 1.9, 2.4, 2.9] {
            let h = 1e-5;
            let fd1 = (c.eval(x + h)[0] - c.eval(x - h)[0]) / (2.0 * h);
            let fd2 = (c.eval(x + h)[1] - c.eval(x - h)[1]) / (2.0 * h);
            let e = c.eval(x);
            assert!((fd1 - e[1]).abs() < 1e-8 && (fd2 - e[2]).abs() < 1e-6);
        }
    }

    fn grid2() -> Grid {
        Grid::new(2, 41, 32, 4.0).unwrap()
    }

    #[test]
    fn lifting_examples() {
        let g = grid2();
        let c = Cutoff::default();
        let flat = lift(&InterfaceState::flat(&g), &g, &c).unwrap();
        for p in 0..g.np() {
            assert_eq!(flat.big_phi(p), g.coords(p)[0]);
            assert_eq!(flat.d1(p), 1.0);
        }
        let st = InterfaceState { phi: vec![0.25; g.ntan()], dt_phi: vec![0.0; g.ntan()] };
        let l = lift(&st, &g, &c).unwrap();
        // x1 = 0.5 is index 5 at h1 = 0.1
        assert!((l.big_phi(5 * g.ntan()) - 0.75).abs() < 1e-14);
        let st = InterfaceState {
            phi: g.sample_boundary(1, |x, o| o[0] = 0.1 * (2.0 * std::f64::consts::PI * x[0]).sin()),
            dt_phi: vec![0.0; g.ntan()],
        };
        assert!(lift(&st, &g, &c).unwrap().min_d1() > 0.9);
        let big = InterfaceState { phi: vec![0.6; g.ntan()], dt_phi: vec![0.0; g.ntan()] };
        assert!(matches!(lift(&big, &g, &c), Err(FbError::AdmissibilityViolation { .. })));
    }

    #[test]
    fn lifted_derivative_of_phi_itself() {
        let err = |g: Grid| {
            let c = Cutoff::default();
            let st = InterfaceState {
                phi: g.sample_boundary(1, |x, o| o[0] = 0.2 * (2.0 * std::f64::consts::PI * x[0]).sin()),
                dt_phi: vec![0.0; g.ntan()],
            };
            let l = lift(&st, &g, &c).unwrap();
            let f: Vec<f64> = (0..g.np()).map(|p| l.big_phi(p)).collect();
            let d1 = lifted_derivative(&f, 1, None, &l, Direction::X1).unwrap();
            let d2 = lifted_derivative(&f, 1, None, &l, Direction::Tan(0)).unwrap();
            let mut e: f64 = 0.0;
            for p in 0..g.np() {
                let i1 = g.i1_of(p);
                if i1 >= 2 && i1 + 2 < g.n1 {
                    e = e.max((d1[p] - 1.0).abs()).max(d2[p].abs());
                }
            }
            e
        };
        let e1 = err(Grid::new(2, 81, 32, 4.0).unwrap());
        let e2 = err(Grid::new(2, 161, 64, 4.0).unwrap());
        assert!((e1 / e2).log2() > 3.0, "{e1} {e2}");
        // x2 has unit lifted x2-derivative regardless of the lifting
        let g = grid2();
        let st = InterfaceState { phi: g.sample_boundary(1, |x, o| o[0] = 0.1 * x[0].sin()), dt_phi: vec![0.0; g.ntan()] };
        let l = lift(&st, &g, &Cutoff::default()).unwrap();
        // periodic linear function is not periodic; use sin with known derivative instead
        let f = g.sample(1, |x, o| o[0] = (2.0 * std::f64::consts::PI * x[1]).sin());
        let d2 = lifted_derivative(&f, 1, None, &l, Direction::Tan(0)).unwrap();
        let plain = g.dtan(&f, 1, 0);
        assert!(d2.iter().zip(&plain).all(|(a, b)| (a - b).abs() < 1e-14));
    }

    #[test]
    fn divergence_free_by_construction() {
        for d in [2, 3] {
            let g = Grid::new(d, 25, 16, 4.0).unwrap();
            let st = InterfaceState {
                phi: g.sample_boundary(1, |x, o| o[0] = 0.1 * (2.0 * std::f64::consts::PI * x[0]).cos()),
                dt_phi: vec![0.0; g.ntan()],
            };
            let l = lift(&st, &g, &Cutoff::default()).unwrap();
            let a = sine_potential(&g, 0.4, 1.0);
            let h = divergence_free_init(&a, &l);
            let (hn, div) = constraints(&h, d, 0, &l);
            assert!(div.iter().all(|x| x.abs() < 1e-12), "d={d}");
            assert!(hn.iter().all(|x| x.abs() < 1e-14));
            let zero = divergence_free_init(&vec![0.0; a.len()], &l);
            assert!(zero.iter().all(|x| *x == 0.0));
        }
    }

    #[test]
    fn rt_margin_examples() {
        let g = grid2();
        let lin = g.sample(1, |x, o| o[0] = x[0]);
        assert!((rayleigh_taylor_margin(&g, &lin, 1, 0).margin - 1.0).abs() < 1e-12);
        let quad = g.sample(1, |x, o| o[0] = x[0] * x[0]);
        assert!(rayleigh_taylor_margin(&g, &quad, 1, 0).margin.abs() < 1e-12);
        let bad = g.sample(1, |x, o| o[0] = -x[0] + x[0] * x[0]);
        assert!(!rayleigh_taylor_margin(&g, &bad, 1, 0).satisfied);
    }
}
