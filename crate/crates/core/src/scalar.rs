//! Scalar abstraction so the pointwise kernels can run on plain floats or on
//! forward-mode dual numbers (exact first derivatives).

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

pub trait Scalar:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + Send
    + Sync
{
    fn cst(x: f64) -> Self;
    fn re(&self) -> f64;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tanh(self) -> Self;

    fn zero() -> Self {
        Self::cst(0.0)
    }
    fn one() -> Self {
        Self::cst(1.0)
    }
    fn recip(self) -> Self {
        Self::one() / self
    }
    fn powf(self, e: f64) -> Self {
        (self.ln() * e).exp()
    }
    fn sq(self) -> Self {
        self * self
    }
}

impl Scalar for f64 {
    fn cst(x: f64) -> Self {
        x
    }
    fn re(&self) -> f64 {
        *self
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn powf(self, e: f64) -> Self {
        f64::powf(self, e)
    }
}

/// Forward-mode dual number carrying `N` directional derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<const N: usize> {
    pub re: f64,
    pub eps: [f64; N],
}

impl<const N: usize> Dual<N> {
    pub fn constant(re: f64) -> Self {
        Dual { re, eps: [0.0; N] }
    }
    /// Independent variable number `k`.
    pub fn var(re: f64, k: usize) -> Self {
        let mut eps = [0.0; N];
        eps[k] = 1.0;
        Dual { re, eps }
    }
    fn chain(self, f: f64, df: f64) -> Self {
        let mut eps = self.eps;
        for e in eps.iter_mut() {
            *e *= df;
        }
        Dual { re: f, eps }
    }
}

impl<const N: usize> Add for Dual<N> {
    type Output = Self;
    fn add(mut self, o: Self) -> Self {
        self.re += o.re;
        for k in 0..N {
            self.eps[k] += o.eps[k];
        }
        self
    }
}
impl<const N: usize> Sub for Dual<N> {
    type Output = Self;
    fn sub(mut self, o: Self) -> Self {
        self.re -= o.re;
        for k in 0..N {
            self.eps[k] -= o.eps[k];
        }
        self
    }
}
impl<const N: usize> Mul for Dual<N> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let mut eps = [0.0; N];
        for k in 0..N {
            eps[k] = self.eps[k] * o.re + self.re * o.eps[k];
        }
        Dual { re: self.re * o.re, eps }
    }
}
impl<const N: usize> Div for Dual<N> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / o.re;
        let re = self.re * inv;
        let mut eps = [0.0; N];
        for k in 0..N {
            eps[k] = (self.eps[k] - re * o.eps[k]) * inv;
        }
        Dual { re, eps }
    }
}
impl<const N: usize> Neg for Dual<N> {
    type Output = Self;
    fn neg(self) -> Self {
        self.chain(-self.re, -1.0)
    }
}
impl<const N: usize> Add<f64> for Dual<N> {
    type Output = Self;
    fn add(mut self, o: f64) -> Self {
        self.re += o;
        self
    }
}
impl<const N: usize> Sub<f64> for Dual<N> {
    type Output = Self;
    fn sub(mut self, o: f64) -> Self {
        self.re -= o;
        self
    }
}
impl<const N: usize> Mul<f64> for Dual<N> {
    type Output = Self;
    fn mul(self, o: f64) -> Self {
        self.chain(self.re * o, o)
    }
}
impl<const N: usize> Div<f64> for Dual<N> {
    type Output = Self;
    fn div(self, o: f64) -> Self {
        self.chain(self.re / o, 1.0 / o)
    }
}
impl<const N: usize> AddAssign for Dual<N> {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}
impl<const N: usize> SubAssign for Dual<N> {
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}
impl<const N: usize> MulAssign for Dual<N> {
    fn mul_assign(&mut self, o: Self) {
        *self = *self * o;
    }
}

impl<const N: usize> Scalar for Dual<N> {
    fn cst(x: f64) -> Self {
        Dual::constant(x)
    }
    fn re(&self) -> f64 {
        self.re
    }
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        self.chain(s, 0.5 / s)
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        self.chain(e, e)
    }
    fn ln(self) -> Self {
        self.chain(self.re.ln(), 1.0 / self.re)
    }
    fn sin(self) -> Self {
        self.chain(self.re.sin(), self.re.cos())
    }
    fn cos(self) -> Self {
        self.chain(self.re.cos(), -self.re.sin())
    }
    fn tanh(self) -> Self {
        let t = self.re.tanh();
        self.chain(t, 1.0 - t * t)
    }
    fn powf(self, e: f64) -> Self {
        let p = self.re.powf(e);
        self.chain(p, e * self.re.powf(e - 1.0))
    }
}

/// Truncated Taylor series `sum_{k < M} c[k] t^k` in one variable. Pushing
/// a jet through a kernel yields the time-derivative traces of its output.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet<const M: usize> {
    pub c: [f64; M],
}

impl<const M: usize> Jet<M> {
    pub fn constant(x: f64) -> Self {
        let mut c = [0.0; M];
        c[0] = x;
        Jet { c }
    }
    fn map_scale(mut self, a: f64) -> Self {
        self.c.iter_mut().for_each(|x| *x *= a);
        self
    }
}

impl<const M: usize> Add for Jet<M> {
    type Output = Self;
    fn add(mut self, o: Self) -> Self {
        for k in 0..M {
            self.c[k] += o.c[k];
        }
        self
    }
}
impl<const M: usize> Sub for Jet<M> {
    type Output = Self;
    fn sub(mut self, o: Self) -> Self {
        for k in 0..M {
            self.c[k] -= o.c[k];
        }
        self
    }
}
impl<const M: usize> Mul for Jet<M> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let mut c = [0.0; M];
        for i in 0..M {
            if self.c[i] == 0.0 {
                continue;
            }
            for j in 0..M - i {
                c[i + j] += self.c[i] * o.c[j];
            }
        }
        Jet { c }
    }
}
impl<const M: usize> Div for Jet<M> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let mut q = [0.0; M];
        for k in 0..M {
            let mut acc = self.c[k];
            for j in 0..k {
                acc -= q[j] * o.c[k - j];
            }
            q[k] = acc / o.c[0];
        }
        Jet { c: q }
    }
}
impl<const M: usize> Neg for Jet<M> {
    type Output = Self;
    fn neg(self) -> Self {
        self.map_scale(-1.0)
    }
}
impl<const M: usize> Add<f64> for Jet<M> {
    type Output = Self;
    fn add(mut self, o: f64) -> Self {
        self.c[0] += o;
        self
    }
}
impl<const M: usize> Sub<f64> for Jet<M> {
    type Output = Self;
    fn sub(mut self, o: f64) -> Self {
        self.c[0] -= o;
        self
    }
}
impl<const M: usize> Mul<f64> for Jet<M> {
    type Output = Self;
    fn mul(self, o: f64) -> Self {
        self.map_scale(o)
    }
}
impl<const M: usize> Div<f64> for Jet<M> {
    type Output = Self;
    fn div(self, o: f64) -> Self {
        self.map_scale(1.0 / o)
    }
}
impl<const M: usize> AddAssign for Jet<M> {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}
impl<const M: usize> SubAssign for Jet<M> {
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}
impl<const M: usize> MulAssign for Jet<M> {
    fn mul_assign(&mut self, o: Self) {
        *self = *self * o;
    }
}

impl<const M: usize> Scalar for Jet<M> {
    fn cst(x: f64) -> Self {
        Jet::constant(x)
    }
    fn re(&self) -> f64 {
        self.c[0]
    }
    fn sqrt(self) -> Self {
        let mut s = [0.0; M];
        s[0] = self.c[0].sqrt();
        for k in 1..M {
            let mut acc = self.c[k];
            for j in 1..k {
                acc -= s[j] * s[k - j];
            }
            s[k] = acc / (2.0 * s[0]);
        }
        Jet { c: s }
    }
    fn exp(self) -> Self {
        let mut e = [0.0; M];
        e[0] = self.c[0].exp();
        for k in 1..M {
            let acc: f64 = (1..=k).map(|j| j as f64 * self.c[j] * e[k - j]).sum();
            e[k] = acc / k as f64;
        }
        Jet { c: e }
    }
    fn ln(self) -> Self {
        let a = &self.c;
        let mut l = [0.0; M];
        l[0] = a[0].ln();
        for k in 1..M {
            let acc: f64 = (1..k).map(|j| j as f64 * l[j] * a[k - j]).sum();
            l[k] = (a[k] - acc / k as f64) / a[0];
        }
        Jet { c: l }
    }
    fn sin(self) -> Self {
        sin_cos(&self.c).0
    }
    fn cos(self) -> Self {
        sin_cos(&self.c).1
    }
    fn tanh(self) -> Self {
        // t' = (1 - t^2) a'
        let a = &self.c;
        let mut t = [0.0; M];
        let mut w = [0.0; M];
        t[0] = a[0].tanh();
        w[0] = 1.0 - t[0] * t[0];
        for k in 1..M {
            let acc: f64 = (1..=k).map(|j| j as f64 * a[j] * w[k - j]).sum();
            t[k] = acc / k as f64;
            w[k] = -(0..=k).map(|i| t[i] * t[k - i]).sum::<f64>();
        }
        Jet { c: t }
    }
}

fn sin_cos<const M: usize>(a: &[f64; M]) -> (Jet<M>, Jet<M>) {
    let mut s = [0.0; M];
    let mut c = [0.0; M];
    s[0] = a[0].sin();
    c[0] = a[0].cos();
    for k in 1..M {
        let (mut ds, mut dc) = (0.0, 0.0);
        for j in 1..=k {
            ds += j as f64 * a[j] * c[k - j];
            dc -= j as f64 * a[j] * s[k - j];
        }
        s[k] = ds / k as f64;
        c[k] = dc / k as f64;
    }
    (Jet { c: s }, Jet { c })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dual_matches_closed_form_derivative() {
        let x = Dual::<1>::var(0.7, 0);
        let f = (x * x).sin() / (x + 1.0) + x.powf(1.5).exp().ln();
        let xr: f64 = 0.7;
        let df = 2.0 * xr * (xr * xr).cos() / (xr + 1.0) - (xr * xr).sin() / (xr + 1.0).powi(2)
            + 1.5 * xr.sqrt();
        assert!((f.eps[0] - df).abs() < 1e-14);
    }

    #[test]
    fn dual_tanh_and_sqrt() {
        let x = Dual::<2>::var(0.3, 1);
        let f = x.tanh() * x.sqrt();
        let t = 0.3f64.tanh();
        let df = (1.0 - t * t) * 0.3f64.sqrt() + t * 0.5 / 0.3f64.sqrt();
        assert!((f.eps[1] - df).abs() < 1e-14);
        assert_eq!(f.eps[0], 0.0);
    }

    #[test]
    fn jet_reproduces_taylor_coefficients() {
        // f(t) = exp(sin(x0 + t)) / sqrt(2 + t) at x0 = 0.4, derivatives by
        // central differences of high order
        let f = |t: f64| (0.4f64 + t).sin().exp() / (2.0 + t).sqrt() + (0.3 + 0.5 * t).tanh() * (1.0 + t).ln();
        let mut x = Jet::<5>::constant(0.4);
        x.c[1] = 1.0;
        let mut y = Jet::<5>::constant(2.0);
        y.c[1] = 1.0;
        let mut z = Jet::<5>::constant(0.3);
        z.c[1] = 0.5;
        let mut w = Jet::<5>::constant(1.0);
        w.c[1] = 1.0;
        let j = x.sin().exp() / y.sqrt() + z.tanh() * w.ln();
        let h = 1e-2;
        let fd = crate::fd::fornberg(0.0, &(-4..=4).map(|k| k as f64 * h).collect::<Vec<_>>(), 2);
        let d2: f64 = fd.iter().enumerate().map(|(k, c)| c * f((k as f64 - 4.0) * h)).sum();
        assert!((j.c[0] - f(0.0)).abs() < 1e-15);
        assert!((2.0 * j.c[2] - d2).abs() < 1e-9, "{} {}", 2.0 * j.c[2], d2);
        let fd3 = crate::fd::fornberg(0.0, &(-4..=4).map(|k| k as f64 * h).collect::<Vec<_>>(), 3);
        let d3: f64 = fd3.iter().enumerate().map(|(k, c)| c * f((k as f64 - 4.0) * h)).sum();
        assert!((6.0 * j.c[3] - d3).abs() < 1e-7, "{} {}", 6.0 * j.c[3], d3);
    }
}
