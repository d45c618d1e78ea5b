//! Equations of state, thermodynamic derived quantities and relativistic
//! kinematic conversions.

use crate::error::{FbError, FbResult};
use crate::scalar::Scalar;

/// Density and internal energy together with their first derivatives in
/// (p, S).
#[derive(Clone, Copy, Debug)]
pub struct Thermo<T> {
    pub rho: T,
    pub rho_p: T,
    pub rho_s: T,
    pub e: T,
    pub e_p: T,
    pub e_s: T,
}

/// Abstract equation of state in the (p, S) parametrization.
pub trait EquationOfState {
    fn eval(&self, p: f64, s: f64) -> Thermo<f64>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EosKind {
    /// `rho = ((p + p_inf) e^{-S})^{1/gamma}`, `e = (p + gamma p_inf)/((gamma-1) rho)`.
    /// With `p_inf = 0` this is the polytropic ideal gas.
    StiffenedGas { gamma: f64, p_inf: f64 },
    /// Incompressible fixture with `e = e0 + p`; violates the Gibbs relation
    /// on purpose.
    ConstantDensity { rho0: f64, e0: f64 },
}

impl EosKind {
    pub fn thermo<T: Scalar>(&self, p: T, s: T) -> Thermo<T> {
        match *self {
            EosKind::StiffenedGas { gamma, p_inf } => {
                let pp = p + p_inf;
                let rho = (pp * (-s).exp()).powf(1.0 / gamma);
                let rho_p = rho / (pp * gamma);
                let rho_s = -rho / gamma;
                let num = p + gamma * p_inf;
                let e = num / (rho * (gamma - 1.0));
                let e_p = (rho - num * rho_p) / (rho * rho * (gamma - 1.0));
                let e_s = -(num * rho_s) / (rho * rho * (gamma - 1.0));
                Thermo { rho, rho_p, rho_s, e, e_p, e_s }
            }
            EosKind::ConstantDensity { rho0, e0 } => Thermo {
                rho: T::cst(rho0),
                rho_p: T::zero(),
                rho_s: T::zero(),
                e: p + e0,
                e_p: T::one(),
                e_s: T::zero(),
            },
        }
    }
}

impl EquationOfState for EosKind {
    fn eval(&self, p: f64, s: f64) -> Thermo<f64> {
        self.thermo(p, s)
    }
}

/// EOS together with the admissible density band and the inverse light
/// speed (`eps_c = 0` selects the non-relativistic branch).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EosModel {
    pub kind: EosKind,
    pub rho_min: f64,
    pub rho_max: f64,
    pub eps_c: f64,
}

impl Default for EosModel {
    fn default() -> Self {
        EosModel {
            kind: EosKind::StiffenedGas { gamma: 5.0 / 3.0, p_inf: 0.0 },
            rho_min: 0.1,
            rho_max: 10.0,
            eps_c: 0.0,
        }
    }
}

impl EosModel {
    pub fn ideal(gamma: f64) -> Self {
        EosModel { kind: EosKind::StiffenedGas { gamma, p_inf: 0.0 }, ..Default::default() }
    }

    pub fn stiffened(gamma: f64, p_inf: f64) -> Self {
        EosModel { kind: EosKind::StiffenedGas { gamma, p_inf }, ..Default::default() }
    }

    pub fn with_eps(mut self, eps_c: f64) -> Self {
        self.eps_c = eps_c;
        self
    }

    pub fn is_relativistic(&self) -> bool {
        self.eps_c != 0.0
    }

    pub fn check_band(&self, rho: f64) -> FbResult<()> {
        if rho > self.rho_min && rho < self.rho_max && rho.is_finite() {
            Ok(())
        } else {
            Err(FbError::AdmissibilityViolation { quantity: "density", value: rho, lo: self.rho_min, hi: self.rho_max })
        }
    }

    pub fn validate(&self) -> FbResult<()> {
        if !(0.0 < self.rho_min && self.rho_min < self.rho_max) {
            return Err(FbError::InvalidInput("density band must satisfy 0 < rho_min < rho_max".into()));
        }
        if !(self.eps_c >= 0.0) {
            return Err(FbError::InvalidInput("eps_c must be nonnegative".into()));
        }
        if let EosKind::StiffenedGas { gamma, p_inf } = self.kind {
            if !(gamma > 1.0) || !(p_inf >= 0.0) {
                return Err(FbError::InvalidInput("need gamma > 1 and p_inf >= 0".into()));
            }
        }
        Ok(())
    }
}

/// Pointwise thermodynamic output of [`eos_eval`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EosPoint {
    pub rho: f64,
    pub a: f64,
    pub e: f64,
    pub h: f64,
}

pub fn eos_eval(model: &EosModel, p: f64, s: f64) -> FbResult<EosPoint> {
    let th = model.kind.eval(p, s);
    model.check_band(th.rho)?;
    let a = (1.0 / th.rho_p).sqrt();
    let h = 1.0 + model.eps_c * model.eps_c * (th.e + p / th.rho);
    if model.is_relativistic() {
        let cs = a / h.sqrt();
        if !(cs * model.eps_c < 1.0) {
            return Err(FbError::SubluminalViolation { cs, c: 1.0 / model.eps_c });
        }
    }
    Ok(EosPoint { rho: th.rho, a, e: th.e, h })
}

/// Central-difference residual of `de - (p/rho^2) d rho` along `dS = 0`.
pub fn gibbs_consistency(model: &EosModel, p: f64, s: f64, step: f64) -> FbResult<f64> {
    if !(step > 0.0 && step <= 1e-2) {
        return Err(FbError::InvalidInput(format!("gibbs step {step} outside (0, 1e-2]")));
    }
    let centre = model.kind.eval(p, s);
    model.check_band(centre.rho)?;
    let plus = model.kind.eval(p + step, s);
    let minus = model.kind.eval(p - step, s);
    let de = (plus.e - minus.e) / (2.0 * step);
    let drho = (plus.rho - minus.rho) / (2.0 * step);
    Ok((de - p / (centre.rho * centre.rho) * drho).abs())
}

/// Relativistic kinematic quantities derived from (v, H).
#[derive(Clone, Debug, PartialEq)]
pub struct Covariant {
    pub gamma: f64,
    pub w: Vec<f64>,
    /// Four-velocity `(u^0, u^1, ..., u^d)`.
    pub u: Vec<f64>,
    /// Magnetic four-vector `(b^0, b^1, ..., b^d)`.
    pub b: Vec<f64>,
    pub b_norm2: f64,
}

pub fn lorentz_factor(eps_c: f64, v: &[f64]) -> FbResult<f64> {
    let beta = eps_c * v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if beta >= 1.0 || !beta.is_finite() {
        return Err(FbError::SuperluminalInput(beta));
    }
    Ok(1.0 / (1.0 - beta * beta).sqrt())
}

pub fn primitive_to_covariant(v: &[f64], h: &[f64], model: &EosModel) -> FbResult<Covariant> {
    let eps = model.eps_c;
    let gamma = lorentz_factor(eps, v)?;
    let vh: f64 = v.iter().zip(h).map(|(a, b)| a * b).sum();
    let h2: f64 = h.iter().map(|x| x * x).sum();
    let mut u = vec![gamma];
    let mut b = vec![eps * eps * gamma * vh];
    for i in 0..v.len() {
        u.push(eps * gamma * v[i]);
        b.push(eps * h[i] / gamma + eps.powi(3) * gamma * vh * v[i]);
    }
    let b_norm2 = eps * eps * h2 / (gamma * gamma) + eps.powi(4) * vh * vh;
    Ok(Covariant { gamma, w: v.iter().map(|x| gamma * x).collect(), u, b, b_norm2 })
}

/// Minkowski inner product with signature (-, +, ..., +).
pub fn minkowski(x: &[f64], y: &[f64]) -> f64 {
    -x[0] * y[0] + x[1..].iter().zip(&y[1..]).map(|(a, b)| a * b).sum::<f64>()
}

pub fn covariant_to_primitive(u: &[f64], b: &[f64], model: &EosModel) -> FbResult<(Vec<f64>, Vec<f64>)> {
    let eps = model.eps_c;
    if eps <= 0.0 {
        return Err(FbError::InvalidInput("covariant variables need eps_c > 0".into()));
    }
    let norm = minkowski(u, u) + 1.0;
    if norm.abs() > 1e-10 || u[0] <= 0.0 {
        return Err(FbError::NormalizationViolation(norm));
    }
    let d = u.len() - 1;
    let v = (1..=d).map(|i| u[i] / (eps * u[0])).collect();
    let h = (1..=d).map(|i| (u[0] * b[i] - u[i] * b[0]) / eps).collect();
    Ok((v, h))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ideal_gas_defaults() {
        let m = EosModel::default();
        let pt = eos_eval(&m, 1.0, 0.0).unwrap();
        assert!((pt.rho - 1.0).abs() < 1e-15);
        assert!((pt.a * pt.a - 5.0 / 3.0).abs() < 1e-14);
        assert_eq!(pt.h, 1.0);
        // a^2 = dp/drho at fixed S, by central differences of p(rho) = rho^gamma e^S
        let g = 5.0 / 3.0;
        let dr = 1e-5;
        let dp = ((1.0 + dr).powf(g) - (1.0 - dr).powf(g)) / (2.0 * dr);
        assert!((dp - pt.a * pt.a).abs() < 1e-9);
    }

    #[test]
    fn relativistic_index() {
        let m = EosModel::default().with_eps(1.0);
        let pt = eos_eval(&m, 1.0, 0.0).unwrap();
        assert!((pt.e - 1.5).abs() < 1e-14);
        assert!((pt.h - 3.5).abs() < 1e-14);
    }

    #[test]
    fn band_and_light_speed_errors() {
        let m = EosModel::default();
        assert!(matches!(eos_eval(&m, 1e-6, 0.0), Err(FbError::AdmissibilityViolation { .. })));
        // eps^2 c_s^2 tends to gamma - 1 at high pressure, so only gamma > 2 can break causality
        let m = EosModel::ideal(2.5).with_eps(1.0);
        assert!(matches!(eos_eval(&m, 10.0, 0.0), Err(FbError::SubluminalViolation { .. })));
    }

    #[test]
    fn gibbs_exact_and_fixture_fails() {
        let m = EosModel::default();
        let r1 = gibbs_consistency(&m, 1.0, 0.0, 1e-4).unwrap();
        assert!(r1 <= 1e-7);
        let sg = EosModel::stiffened(1.4, 1.0);
        let r2 = gibbs_consistency(&sg, 1.0, 0.2, 1e-2).unwrap();
        let r3 = gibbs_consistency(&sg, 1.0, 0.2, 5e-3).unwrap();
        assert!(r2 < 1e-4 && (r2 / r3).log2() >= 1.9, "{r2} {r3}");
        let bad = EosModel { kind: EosKind::ConstantDensity { rho0: 1.0, e0: 1.0 }, ..Default::default() };
        assert!(gibbs_consistency(&bad, 1.0, 0.0, 1e-4).unwrap() > 0.5);
    }

    #[test]
    fn rest_frame_and_boost() {
        let m = EosModel::default().with_eps(1.0);
        let c = primitive_to_covariant(&[0.0, 0.0, 0.0], &[0.3, -0.2, 0.5], &m).unwrap();
        assert_eq!(c.gamma, 1.0);
        assert_eq!(c.u, vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(c.b, vec![0.0, 0.3, -0.2, 0.5]);
        let c = primitive_to_covariant(&[0.6, 0.0, 0.0], &[1.0, 2.0, 3.0], &m).unwrap();
        assert!((c.gamma - 1.25).abs() < 1e-15);
        assert!(matches!(
            primitive_to_covariant(&[1.0, 0.0, 0.0], &[0.0; 3], &m),
            Err(FbError::SuperluminalInput(_))
        ));
    }

    #[test]
    fn normalization_is_checked() {
        let m = EosModel::default().with_eps(1.0);
        let r = covariant_to_primitive(&[1.0, 0.5, 0.0], &[0.0, 0.0, 0.0], &m);
        assert!(matches!(r, Err(FbError::NormalizationViolation(_))));
    }
}
