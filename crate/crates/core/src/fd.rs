//! Finite-difference stencils applied along one axis of a row-major array.

use rayon::prelude::*;

/// Boundary treatment of a first-derivative stencil.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AxisKind {
    /// Centered 4th order with wrap-around.
    Periodic,
    /// Centered 4th order inside, 3rd-order one-sided at both ends.
    Bounded,
    /// Like `Bounded`, but values before index 0 are taken to be zero.
    Causal,
}

const C4: [f64; 5] = [1.0 / 12.0, -8.0 / 12.0, 0.0, 8.0 / 12.0, -1.0 / 12.0];
const B0: [f64; 4] = [-11.0 / 6.0, 18.0 / 6.0, -9.0 / 6.0, 2.0 / 6.0];
const B1: [f64; 4] = [-2.0 / 6.0, -3.0 / 6.0, 6.0 / 6.0, -1.0 / 6.0];

/// Minimum number of points for the stencils of [`AxisKind::Bounded`].
pub const MIN_POINTS: usize = 5;

const PAR_THRESHOLD: usize = 1 << 15;

#[inline]
fn line_derivative(src: &[f64], stride: usize, len: usize, i: usize, inv_h: f64, kind: AxisKind) -> f64 {
    let at = |j: usize| src[j * stride];
    match kind {
        AxisKind::Periodic => {
            let mut acc = 0.0;
            for (k, w) in C4.iter().enumerate() {
                if *w != 0.0 {
                    let j = (i + len + k - 2) % len;
                    acc += w * at(j);
                }
            }
            acc * inv_h
        }
        AxisKind::Bounded | AxisKind::Causal => {
            if i >= 2 && i + 2 < len {
                (C4[0] * at(i - 2) + C4[1] * at(i - 1) + C4[3] * at(i + 1) + C4[4] * at(i + 2)) * inv_h
            } else if i < 2 && kind == AxisKind::Causal && len >= 3 {
                let g = |j: isize| if j < 0 { 0.0 } else { at(j as usize) };
                let ii = i as isize;
                (C4[0] * g(ii - 2) + C4[1] * g(ii - 1) + C4[3] * g(ii + 1) + C4[4] * g(ii + 2)) * inv_h
            } else if i == 0 {
                (B0[0] * at(0) + B0[1] * at(1) + B0[2] * at(2) + B0[3] * at(3)) * inv_h
            } else if i == 1 {
                (B1[0] * at(0) + B1[1] * at(1) + B1[2] * at(2) + B1[3] * at(3)) * inv_h
            } else if i == len - 1 {
                -(B0[0] * at(len - 1) + B0[1] * at(len - 2) + B0[2] * at(len - 3) + B0[3] * at(len - 4)) * inv_h
            } else {
                -(B1[0] * at(len - 1) + B1[1] * at(len - 2) + B1[2] * at(len - 3) + B1[3] * at(len - 4)) * inv_h
            }
        }
    }
}

/// First derivative along `axis` of an array with shape `dims`.
/// Axes of length 1 have zero derivative.
pub fn diff_axis(data: &[f64], dims: &[usize], axis: usize, h: f64, kind: AxisKind) -> Vec<f64> {
    let len = dims[axis];
    let inner: usize = dims[axis + 1..].iter().product();
    let outer: usize = dims[..axis].iter().product();
    debug_assert_eq!(data.len(), outer * len * inner);
    let mut out = vec![0.0; data.len()];
    if len == 1 {
        return out;
    }
    let inv_h = 1.0 / h;
    let block = len * inner;
    let work = |(o, chunk): (usize, &mut [f64])| {
        let base = &data[o * block..(o + 1) * block];
        for i in 0..len {
            let row = &mut chunk[i * inner..(i + 1) * inner];
            for (k, r) in row.iter_mut().enumerate() {
                *r = line_derivative(&base[k..], inner, len, i, inv_h, kind);
            }
        }
    };
    if data.len() >= PAR_THRESHOLD && outer > 1 {
        out.par_chunks_mut(block).enumerate().for_each(work);
    } else {
        out.chunks_mut(block).enumerate().for_each(work);
    }
    out
}

/// Undivided fourth difference along `axis` (zero within two points of a
/// non-periodic end).
pub fn fourth_difference(data: &[f64], dims: &[usize], axis: usize, periodic: bool) -> Vec<f64> {
    let len = dims[axis];
    let inner: usize = dims[axis + 1..].iter().product();
    let block = len * inner;
    let mut out = vec![0.0; data.len()];
    if len < 5 {
        return out;
    }
    const W: [f64; 5] = [1.0, -4.0, 6.0, -4.0, 1.0];
    out.chunks_mut(block).enumerate().for_each(|(o, chunk)| {
        let base = &data[o * block..(o + 1) * block];
        for i in 0..len {
            if !periodic && (i < 2 || i + 2 >= len) {
                continue;
            }
            for k in 0..inner {
                let mut acc = 0.0;
                for (m, w) in W.iter().enumerate() {
                    let j = (i + len + m - 2) % len;
                    acc += w * base[j * inner + k];
                }
                chunk[i * inner + k] = acc;
            }
        }
    });
    out
}

/// Fornberg weights for the `m`-th derivative at `x0` from nodes `xs`.
pub fn fornberg(x0: f64, xs: &[f64], m: usize) -> Vec<f64> {
    let n = xs.len();
    let mut c = vec![vec![0.0; m + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.iter().map(|row| row[m]).collect()
}

/// Lagrange interpolation weights at fractional index `s` using `npts`
/// consecutive nodes starting at `start`.
pub fn interp_weights(s: f64, start: isize, npts: usize) -> Vec<f64> {
    let xs: Vec<f64> = (0..npts).map(|k| (start + k as isize) as f64).collect();
    fornberg(s, &xs, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fornberg_classical_weights() {
        let w = fornberg(0.0, &[-2.0, -1.0, 0.0, 1.0, 2.0], 1);
        let expect = [1.0 / 12.0, -2.0 / 3.0, 0.0, 2.0 / 3.0, -1.0 / 12.0];
        for (a, b) in w.iter().zip(expect) {
            assert!((a - b).abs() < 1e-14);
        }
        let w = fornberg(0.0, &[0.0, 1.0, 2.0, 3.0], 1);
        for (a, b) in w.iter().zip(B0) {
            assert!((a - b).abs() < 1e-14);
        }
        let w = fornberg(1.0, &[0.0, 1.0, 2.0, 3.0], 1);
        for (a, b) in w.iter().zip(B1) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn bounded_exact_on_cubics() {
        let n = 9;
        let h = 0.3;
        let f: Vec<f64> = (0..n).map(|i| (i as f64 * h).powi(3) - 2.0 * (i as f64 * h)).collect();
        let d = diff_axis(&f, &[n], 0, h, AxisKind::Bounded);
        for (i, x) in d.iter().enumerate() {
            let xi = i as f64 * h;
            assert!((x - (3.0 * xi * xi - 2.0)).abs() < 1e-12, "{i}");
        }
    }

    #[test]
    fn periodic_sine_fourth_order() {
        let err = |n: usize| {
            let h = 1.0 / n as f64;
            let f: Vec<f64> = (0..n).map(|i| (2.0 * std::f64::consts::PI * i as f64 * h).sin()).collect();
            let d = diff_axis(&f, &[n], 0, h, AxisKind::Periodic);
            d.iter()
                .enumerate()
                .map(|(i, x)| (x - 2.0 * std::f64::consts::PI * (2.0 * std::f64::consts::PI * i as f64 * h).cos()).abs())
                .fold(0.0, f64::max)
        };
        let order = (err(16) / err(32)).log2();
        assert!(order > 3.8, "{order}");
    }

    #[test]
    fn axis_in_middle_of_shape() {
        // shape [2, 6, 3]; derivative along axis 1 of a linear function
        let dims = [2, 6, 3];
        let mut f = vec![0.0; 36];
        for o in 0..2 {
            for i in 0..6 {
                for k in 0..3 {
                    f[(o * 6 + i) * 3 + k] = (k as f64 + 1.0) * i as f64 * 0.5 + o as f64;
                }
            }
        }
        let d = diff_axis(&f, &dims, 1, 0.5, AxisKind::Bounded);
        for o in 0..2 {
            for i in 0..6 {
                for k in 0..3 {
                    assert!((d[(o * 6 + i) * 3 + k] - (k as f64 + 1.0)).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn causal_uses_zero_past() {
        // f = t^5 vanishes to high order at t = 0, zero extension is smooth
        let n = 12;
        let h = 0.05;
        let f: Vec<f64> = (0..n).map(|i| (i as f64 * h).powi(5)).collect();
        let d = diff_axis(&f, &[n], 0, h, AxisKind::Causal);
        for i in 0..4 {
            assert!((d[i] - 5.0 * (i as f64 * h).powi(4)).abs() < 5.0 * h.powi(4));
        }
    }
}

/// Symbol of the periodic centered stencil on `sin(k x)`/`cos(k x)`:
/// `D sin(k x) = modified_wavenumber(k, h) cos(k x)` exactly on the grid.
pub fn modified_wavenumber(k: f64, h: f64) -> f64 {
    (8.0 * (k * h).sin() - (2.0 * k * h).sin()) / (6.0 * h)
}
