//! Layout of the primary unknown `U = (q, v, H, S)` and the small dense
//! matrix types used at every grid point.

use nalgebra::{DMatrix, SMatrix, SVector};

use crate::scalar::Scalar;

/// Storage order for the largest case d = 3; d = 2 pads with zeros.
pub const NMAX: usize = 8;

pub type M8 = SMatrix<f64, NMAX, NMAX>;
pub type V8 = SVector<f64, NMAX>;

/// Generic fixed-size matrix used by the scalar-generic assembly.
pub type Mat<T> = [[T; NMAX]; NMAX];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub d: usize,
}

impl Layout {
    pub fn new(d: usize) -> Self {
        assert!(d == 2 || d == 3, "spatial dimension must be 2 or 3");
        Layout { d }
    }
    pub fn n(&self) -> usize {
        2 * self.d + 2
    }
    pub const Q: usize = 0;
    pub fn v(&self, i: usize) -> usize {
        1 + i
    }
    pub fn h(&self, i: usize) -> usize {
        1 + self.d + i
    }
    pub fn s(&self) -> usize {
        2 * self.d + 1
    }
}

pub fn zero_mat<T: Scalar>() -> Mat<T> {
    [[T::zero(); NMAX]; NMAX]
}

pub fn to_m8(m: &Mat<f64>) -> M8 {
    M8::from_fn(|i, j| m[i][j])
}

pub fn re_mat<T: Scalar>(m: &Mat<T>) -> M8 {
    M8::from_fn(|i, j| m[i][j].re())
}

/// `J^T B J` for generic scalars, restricted to the leading `n` block.
pub fn congruence<T: Scalar>(j: &Mat<T>, b: &Mat<T>, n: usize) -> Mat<T> {
    let mut bj = zero_mat::<T>();
    for r in 0..n {
        for c in 0..n {
            let mut acc = T::zero();
            for k in 0..n {
                acc += b[r][k] * j[k][c];
            }
            bj[r][c] = acc;
        }
    }
    let mut out = zero_mat::<T>();
    for r in 0..n {
        for c in 0..n {
            let mut acc = T::zero();
            for k in 0..n {
                acc += j[k][r] * bj[k][c];
            }
            out[r][c] = acc;
        }
    }
    out
}

/// Leading `n x n` block as a dynamic matrix.
pub fn block(m: &M8, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| m[(i, j)])
}

/// Eigenvalues of the symmetric leading block, ascending.
pub fn sym_eigenvalues(m: &M8, n: usize) -> Vec<f64> {
    let mut ev: Vec<f64> = block(m, n).symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev
}

/// Frobenius norm of the skew part relative to the norm of the leading block.
pub fn relative_skew(m: &M8, n: usize) -> f64 {
    let b = block(m, n);
    let norm = b.norm();
    if norm == 0.0 {
        return 0.0;
    }
    (&b - b.transpose()).norm() / (2.0 * norm)
}

/// Pads the unused trailing diagonal with ones so that `n < 8` systems can be
/// solved in the fixed-size type.
pub fn pad_identity(mut m: M8, n: usize) -> M8 {
    for k in n..NMAX {
        m[(k, k)] = 1.0;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_indices() {
        let l = Layout::new(3);
        assert_eq!(l.n(), 8);
        assert_eq!((l.v(0), l.h(0), l.s()), (1, 4, 7));
        let l = Layout::new(2);
        assert_eq!((l.n(), l.v(1), l.h(1), l.s()), (6, 2, 4, 5));
    }

    #[test]
    fn congruence_matches_nalgebra() {
        let mut j = zero_mat::<f64>();
        let mut b = zero_mat::<f64>();
        for r in 0..6 {
            for c in 0..6 {
                j[r][c] = ((r * 7 + c * 3) % 5) as f64 - 2.0;
                b[r][c] = ((r + c) % 4) as f64;
            }
        }
        let out = to_m8(&congruence(&j, &b, 6));
        let jm = to_m8(&j);
        let expect = jm.transpose() * to_m8(&b) * jm;
        assert!((out - expect).norm() < 1e-12);
    }
}
