//! Truncated half-space grid `[0, L] x T^{d-1}` and space-time fields on it.

use crate::error::{FbError, FbResult};
use crate::fd::{diff_axis, AxisKind, MIN_POINTS};

/// Uniform grid: `n1` points on `[0, L]` (both ends included) and `nt`
/// points per periodic tangential direction of the unit torus.
///
/// Point index is `i1 * ntan + jt` with `jt = j2 + nt * j3`, so the
/// boundary `x1 = 0` is the contiguous leading slab.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    pub d: usize,
    pub n1: usize,
    pub nt: usize,
    pub length: f64,
}

impl Grid {
    pub fn new(d: usize, n1: usize, nt: usize, length: f64) -> FbResult<Self> {
        if d != 2 && d != 3 {
            return Err(FbError::InvalidInput(format!("dimension {d} not in {{2, 3}}")));
        }
        if n1 < MIN_POINTS || nt < MIN_POINTS {
            return Err(FbError::InvalidInput(format!(
                "grid needs at least {MIN_POINTS} points per axis for the 4th-order stencils"
            )));
        }
        if !(length > 0.0) {
            return Err(FbError::InvalidInput("domain length must be positive".into()));
        }
        Ok(Grid { d, n1, nt, length })
    }

    pub fn h1(&self) -> f64 {
        self.length / (self.n1 - 1) as f64
    }
    pub fn ht(&self) -> f64 {
        1.0 / self.nt as f64
    }
    pub fn ntan(&self) -> usize {
        self.nt.pow(self.d as u32 - 1)
    }
    pub fn np(&self) -> usize {
        self.n1 * self.ntan()
    }
    pub fn x1(&self, i1: usize) -> f64 {
        i1 as f64 * self.h1()
    }
    /// Tangential coordinates `(x2, x3)` of boundary index `jt`.
    pub fn xt(&self, jt: usize) -> [f64; 2] {
        let ht = self.ht();
        [(jt % self.nt) as f64 * ht, (jt / self.nt) as f64 * ht]
    }
    /// Spatial coordinates `[x1, x2, x3]` of point `p` (x3 = 0 when d = 2).
    pub fn coords(&self, p: usize) -> [f64; 3] {
        let ntan = self.ntan();
        let t = self.xt(p % ntan);
        [self.x1(p / ntan), t[0], t[1]]
    }
    pub fn i1_of(&self, p: usize) -> usize {
        p / self.ntan()
    }

    /// Shape of a spatial field with `nc` components.
    pub fn dims(&self, nc: usize) -> Vec<usize> {
        let mut v = vec![self.n1];
        v.extend(self.tangential_dims());
        v.push(nc);
        v
    }
    /// Shape of the tangential part (slowest first).
    pub fn tangential_dims(&self) -> Vec<usize> {
        vec![self.nt; self.d - 1]
    }
    /// Array axis of tangential direction `i` (0 for x2, 1 for x3) within
    /// the tangential sub-shape.
    pub fn tangential_axis(&self, i: usize) -> usize {
        self.d - 2 - i
    }

    pub fn d1(&self, f: &[f64], nc: usize) -> Vec<f64> {
        diff_axis(f, &self.dims(nc), 0, self.h1(), AxisKind::Bounded)
    }
    /// Derivative in tangential direction `i` (0 for x2, 1 for x3).
    pub fn dtan(&self, f: &[f64], nc: usize, i: usize) -> Vec<f64> {
        diff_axis(f, &self.dims(nc), 1 + self.tangential_axis(i), self.ht(), AxisKind::Periodic)
    }
    /// Tangential derivative of a boundary field `[ntan][nc]`.
    pub fn dtan_boundary(&self, f: &[f64], nc: usize, i: usize) -> Vec<f64> {
        let mut dims = self.tangential_dims();
        dims.push(nc);
        diff_axis(f, &dims, self.tangential_axis(i), self.ht(), AxisKind::Periodic)
    }

    /// Trapezoidal weight of point `p` in the spatial L^2 sum.
    pub fn weight(&self, p: usize) -> f64 {
        let i1 = self.i1_of(p);
        let w1 = if i1 == 0 || i1 == self.n1 - 1 { 0.5 } else { 1.0 } * self.h1();
        w1 * self.ht().powi(self.d as i32 - 1)
    }
    pub fn boundary_weight(&self) -> f64 {
        self.ht().powi(self.d as i32 - 1)
    }

    /// Sample a closure of the coordinates into an `nc`-component field.
    pub fn sample<F: Fn([f64; 3], &mut [f64])>(&self, nc: usize, f: F) -> Vec<f64> {
        let mut out = vec![0.0; self.np() * nc];
        for (p, chunk) in out.chunks_mut(nc).enumerate() {
            f(self.coords(p), chunk);
        }
        out
    }
    pub fn sample_boundary<F: Fn([f64; 2], &mut [f64])>(&self, nc: usize, f: F) -> Vec<f64> {
        let mut out = vec![0.0; self.ntan() * nc];
        for (jt, chunk) in out.chunks_mut(nc).enumerate() {
            f(self.xt(jt), chunk);
        }
        out
    }

    pub fn refined(&self) -> Grid {
        Grid { n1: 2 * (self.n1 - 1) + 1, nt: 2 * self.nt, ..*self }
    }
}

/// Space-time grid function on `[0, T]` sampled at `n_time` levels with
/// spacing `dt`. Volume fields live on `Omega_T`, boundary fields on
/// `Sigma_T`. Layout is `[level][point][component]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StField {
    pub grid: Grid,
    pub n_time: usize,
    pub dt: f64,
    pub nc: usize,
    pub boundary: bool,
    pub data: Vec<f64>,
}

impl StField {
    pub fn zeros(grid: Grid, n_time: usize, dt: f64, nc: usize, boundary: bool) -> Self {
        let np = if boundary { grid.ntan() } else { grid.np() };
        StField { grid, n_time, dt, nc, boundary, data: vec![0.0; n_time * np * nc] }
    }
    pub fn like(other: &StField, nc: usize) -> Self {
        StField::zeros(other.grid, other.n_time, other.dt, nc, other.boundary)
    }
    pub fn points(&self) -> usize {
        if self.boundary {
            self.grid.ntan()
        } else {
            self.grid.np()
        }
    }
    pub fn level_len(&self) -> usize {
        self.points() * self.nc
    }
    pub fn level(&self, k: usize) -> &[f64] {
        let n = self.level_len();
        &self.data[k * n..(k + 1) * n]
    }
    pub fn level_mut(&mut self, k: usize) -> &mut [f64] {
        let n = self.level_len();
        &mut self.data[k * n..(k + 1) * n]
    }
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }
    pub fn t_end(&self) -> f64 {
        (self.n_time - 1) as f64 * self.dt
    }

    /// Full array shape: `[time, (x1), tangential..., component]`.
    pub fn dims(&self) -> Vec<usize> {
        let mut v = vec![self.n_time];
        if !self.boundary {
            v.push(self.grid.n1);
        }
        v.extend(self.grid.tangential_dims());
        v.push(self.nc);
        v
    }
    pub fn x1_axis(&self) -> Option<usize> {
        if self.boundary {
            None
        } else {
            Some(1)
        }
    }
    pub fn tangential_axis(&self, i: usize) -> usize {
        (if self.boundary { 1 } else { 2 }) + self.grid.tangential_axis(i)
    }

    /// Time derivative with zero extension to `t < 0`.
    pub fn dt_causal(&self) -> Vec<f64> {
        diff_axis(&self.data, &self.dims(), 0, self.dt, AxisKind::Causal)
    }
    /// Time derivative with one-sided closure at `t = 0`.
    pub fn dt_bounded(&self) -> Vec<f64> {
        diff_axis(&self.data, &self.dims(), 0, self.dt, AxisKind::Bounded)
    }

    /// Trapezoidal space-time weights summed against `|u|^2`.
    pub fn l2(&self) -> f64 {
        l2_weighted(self, &self.data)
    }

    pub fn component(&self, c: usize) -> StField {
        let mut out = StField::like(self, 1);
        for (o, chunk) in out.data.iter_mut().zip(self.data.chunks(self.nc)) {
            *o = chunk[c];
        }
        out
    }

    pub fn scaled(&self, a: f64) -> StField {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|x| *x *= a);
        out
    }
    pub fn axpy(&mut self, a: f64, x: &StField) {
        for (y, xv) in self.data.iter_mut().zip(&x.data) {
            *y += a * xv;
        }
    }
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// Discrete `L^2(Omega_T)` (or `L^2(Sigma_T)`) norm of `data` laid out like `f`.
pub fn l2_weighted(f: &StField, data: &[f64]) -> f64 {
    let nlev = f.level_len();
    let mut acc = 0.0;
    for k in 0..f.n_time {
        let wt = if f.n_time == 1 {
            1.0
        } else if k == 0 || k == f.n_time - 1 {
            0.5 * f.dt
        } else {
            f.dt
        };
        let lvl = &data[k * nlev..(k + 1) * nlev];
        let mut s = 0.0;
        for (p, chunk) in lvl.chunks(f.nc).enumerate() {
            let w = if f.boundary { f.grid.boundary_weight() } else { f.grid.weight(p) };
            s += w * chunk.iter().map(|x| x * x).sum::<f64>();
        }
        acc += wt * s;
    }
    acc.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_and_weights() {
        let g = Grid::new(3, 9, 8, 4.0).unwrap();
        assert_eq!(g.ntan(), 64);
        assert_eq!(g.np(), 9 * 64);
        let c = g.coords(2 * 64 + 3 + 8 * 5);
        assert!((c[0] - 1.0).abs() < 1e-15 && (c[1] - 3.0 / 8.0).abs() < 1e-15 && (c[2] - 5.0 / 8.0).abs() < 1e-15);
        let total: f64 = (0..g.np()).map(|p| g.weight(p)).sum();
        assert!((total - 4.0).abs() < 1e-12);
        assert!(Grid::new(2, 3, 8, 4.0).is_err());
    }

    #[test]
    fn tangential_derivatives_pick_right_axis() {
        let g = Grid::new(3, 6, 16, 1.0).unwrap();
        let f = g.sample(1, |x, o| o[0] = (2.0 * std::f64::consts::PI * x[2]).sin() + x[0] * x[0]);
        let d3 = g.dtan(&f, 1, 1);
        let d2 = g.dtan(&f, 1, 0);
        let d1 = g.d1(&f, 1);
        for p in 0..g.np() {
            let x = g.coords(p);
            assert!(d2[p].abs() < 1e-12);
            assert!((d3[p] - 2.0 * std::f64::consts::PI * (2.0 * std::f64::consts::PI * x[2]).cos()).abs() < 5e-3);
            assert!((d1[p] - 2.0 * x[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn l2_of_constant() {
        let g = Grid::new(2, 5, 8, 1.0).unwrap();
        let mut f = StField::zeros(g, 3, 0.5, 1, false);
        f.data.iter_mut().for_each(|x| *x = 1.0);
        assert!((f.l2() - 1.0).abs() < 1e-14);
    }
}
