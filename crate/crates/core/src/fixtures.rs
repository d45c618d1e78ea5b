//! Analytic basic states and manufactured fields shared by the tests, the
//! command-line scenarios and the acceptance suite.

use std::f64::consts::TAU;
use std::sync::Arc;

use crate::eos::EosModel;
use crate::error::{FbError, FbResult};
use crate::fd::modified_wavenumber;
use crate::grid::Grid;
use crate::interface::{divergence_free_init, lift, sine_potential, smooth_step, Cutoff, InterfaceState};
use crate::linear::{AlinhacFixture, AnalyticBasic, FieldFn, FrontFn};
use crate::nash_moser::{check_compatibility, compatibility_traces, Problem, MAX_TRACE_ORDER};
use crate::state::Layout;

/// Smooth onset: zero with all derivatives for `t <= 0`, one for `t >= width`.
pub fn onset(t: f64, width: f64) -> f64 {
    smooth_step(t / width)[0]
}

/// Rational onset `t^7 / (w^7 + t^7)` for `t > 0`, zero before: vanishes to
/// order six at `t = 0` with moderate higher derivatives, so anisotropic
/// norms of order six stay meaningful.
pub fn soft_onset(t: f64, width: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let y = (t / width).powi(7);
    y / (1.0 + y)
}

/// Parameters of [`sheared_slab`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlabParams {
    /// Front amplitude `a` in `phi = a (1 + growth t) sum_i sin(2 pi x_i)`.
    pub amp: f64,
    pub growth: f64,
    /// Tangential velocity and field at the boundary.
    pub v_tan: f64,
    pub h_tan: f64,
    /// Total pressure at the boundary and its normal slope.
    pub q0: f64,
    pub kappa: f64,
    pub entropy_amp: f64,
    /// Relative interior variation of `v'` and `H'`, which vanishes at `x1 = 0`.
    pub shear: f64,
}

impl Default for SlabParams {
    fn default() -> Self {
        SlabParams { amp: 0.02, growth: 0.5, v_tan: 0.1, h_tan: 0.3, q0: 1.0, kappa: 0.5, entropy_amp: 0.05, shear: 0.1 }
    }
}

impl SlabParams {
    /// Flat, steady slab with `q = q0 + kappa (1 - e^{-x1})`.
    pub fn flat() -> Self {
        SlabParams { amp: 0.0, growth: 0.0, entropy_amp: 0.0, ..Default::default() }
    }
}

/// Default model for linear fixtures: stiffened gas, so the density stays
/// in band where the fluid pressure is near zero.
pub fn slab_model() -> EosModel {
    EosModel::stiffened(5.0 / 3.0, 1.0)
}

/// Basic state on the half-space satisfying the boundary constraints of the
/// linearization exactly for the discrete tangential stencil:
/// `v_1 = d_t phi + v' . grad phi` and `H_1 = H' . grad phi` at `x1 = 0`, with
/// `grad phi` taken through the stencil's modified wavenumber. The normal
/// slope of `q` at the boundary is at least `0.8 kappa`.
pub fn sheared_slab(grid: Grid, model: EosModel, p: SlabParams) -> AnalyticBasic {
    let d = grid.d;
    let l = Layout::new(d);
    let kh = modified_wavenumber(TAU, grid.ht());
    let phi: FrontFn = Arc::new(move |t, x| {
        let s: f64 = (0..d - 1).map(|i| (TAU * x[i]).sin()).sum();
        p.amp * (1.0 + p.growth * t) * s
    });
    let u: FieldFn = Arc::new(move |t, x| {
        let x1 = x[0];
        let e = (-x1).exp();
        let mut u = vec![0.0; 2 * d + 2];
        let ramp = p.amp * (1.0 + p.growth * t);
        let mut dt_phi = 0.0;
        let mut gv = 0.0;
        let mut gh = 0.0;
        for i in 0..d - 1 {
            let xi = x[1 + i];
            dt_phi += p.amp * p.growth * (TAU * xi).sin();
            let g = ramp * kh * (TAU * xi).cos();
            gv += g * p.v_tan;
            gh += g * p.h_tan;
            u[l.v(1 + i)] = p.v_tan * (1.0 + p.shear * x1 * e);
            u[l.h(1 + i)] = p.h_tan * (1.0 - 0.5 * p.shear * x1 * e);
        }
        u[l.v(0)] = (dt_phi + gv) * e;
        u[l.h(0)] = gh * e;
        u[0] = p.q0 + p.kappa * (1.0 - e) * (1.0 + 0.2 * (TAU * x[1]).sin());
        u[l.s()] = p.entropy_amp * (TAU * x[1]).sin() * e;
        u
    });
    let mut reference = vec![0.0; 2 * d + 2];
    reference[0] = p.q0 + p.kappa;
    for i in 1..d {
        reference[l.v(i)] = p.v_tan;
        reference[l.h(i)] = p.h_tan;
    }
    AnalyticBasic { grid, model, cutoff: Cutoff::default(), kappa0: p.kappa, reference, u, phi }
}

/// Constant state with a flat front; every coefficient derivative vanishes.
pub fn constant_basic(grid: Grid, model: EosModel) -> AnalyticBasic {
    let d = grid.d;
    let l = Layout::new(d);
    let mut ubar = vec![0.0; 2 * d + 2];
    ubar[0] = 1.0;
    for i in 1..d {
        ubar[l.v(i)] = 0.1;
        ubar[l.h(i)] = 0.3;
    }
    let c = ubar.clone();
    AnalyticBasic {
        grid,
        model,
        cutoff: Cutoff::default(),
        kappa0: 0.0,
        reference: ubar,
        u: Arc::new(move |_, _| c.clone()),
        phi: Arc::new(|_, _| 0.0),
    }
}

/// Smooth taper equal to one near `x1 = 0` and zero for `x1 >= 0.7 L`.
pub fn taper(x1: f64, length: f64) -> f64 {
    1.0 - smooth_step((x1 - 0.1 * length) / (0.6 * length))[0]
}

/// Manufactured perturbation `(V*, psi*)` vanishing for `t <= 0` and near
/// the outer boundary.
pub fn manufactured_pair(d: usize, length: f64, amp: f64) -> (FieldFn, FrontFn) {
    let n = 2 * d + 2;
    let v: FieldFn = Arc::new(move |t, x| {
        let s = amp * soft_onset(t, 0.3) * (1.0 + 0.5 * (3.0 * t).sin()) * taper(x[0], length);
        (0..n)
            .map(|c| {
                let k = c as f64;
                let tan: f64 = (1..d).map(|i| (TAU * x[i] + 0.7 * k + i as f64).cos()).sum();
                s * (0.5 + 0.3 * k / n as f64 + 0.4 * x[0]) * (1.0 + 0.5 * tan)
            })
            .collect()
    });
    let psi: FrontFn = Arc::new(move |t, x| {
        let tan: f64 = (0..d - 1).map(|i| (TAU * x[i]).cos()).sum();
        0.2 * amp * soft_onset(t, 0.3) * (3.0 * t).cos() * tan
    });
    (v, psi)
}

/// Fixture for the good-unknown identity: a slab with steep normal profiles
/// and a front perturbation comparable to the interior one.
pub fn alinhac_fixture(grid: Grid) -> AlinhacFixture {
    let basic = sheared_slab(
        grid,
        slab_model(),
        SlabParams { amp: 0.05, v_tan: 0.5, h_tan: 0.6, kappa: 1.5, entropy_amp: 0.3, shear: 2.0, ..Default::default() },
    );
    let (v, _) = manufactured_pair(grid.d, grid.length, 0.3);
    let d = grid.d;
    let psi: FrontFn = Arc::new(move |t, x| {
        let tan: f64 = (0..d - 1).map(|i| (TAU * x[i] + 0.3).sin()).sum();
        0.5 * (1.0 + t) * tan
    });
    AlinhacFixture { basic, v, psi, t0: 0.7 }
}

/// Names accepted by [`scenario`].
pub const SCENARIOS: [&str; 4] = ["constant", "sine-interface", "rt-marginal", "rel-boost"];

/// Initial data of a named scenario together with the problem it lives in.
#[derive(Clone, Debug)]
pub struct InitialData {
    pub name: String,
    pub problem: Problem,
    pub u0: Vec<f64>,
    pub phi0: Vec<f64>,
    /// Order up to which the data are compatible.
    pub declared_order: usize,
}

/// Named initial data on `grid`. Every profile has `q = 0` and `H_N = 0` on
/// the boundary and a discretely divergence-free field.
///
/// * `constant`: flat front, uniform tangential field, everything at rest.
/// * `sine-interface`: rippled front, `q = kappa (1 - e^{-x1})` and a
///   divergence-free field from a potential vanishing at `x1 = 0`.
/// * `rt-marginal`: as above but `d1 q` nearly vanishes at one boundary point
///   while the nominal Rayleigh-Taylor constant is `kappa`.
/// * `rel-boost`: relativistic branch (`eps_c = 0.3` unless set) with a
///   tangential drift; its compatibility order is measured.
pub fn scenario(name: &str, grid: Grid, model: EosModel) -> FbResult<InitialData> {
    let d = grid.d;
    let n = 2 * d + 2;
    let l = Layout::new(d);
    let kappa = 0.5;
    let h_tan = 0.3;
    let cutoff = Cutoff::default();
    let mut reference = vec![0.0; n];
    reference[0] = kappa;
    for i in 1..d {
        reference[l.h(i)] = h_tan;
    }
    let flat_q = |_: [f64; 3]| 0.0;
    let sine_q = move |x: [f64; 3]| kappa * (1.0 - (-x[0]).exp());
    let marginal_q = move |x: [f64; 3]| kappa * (1.0 - (-x[0]).exp()) * (1.0 + 0.999 * (TAU * x[1]).sin());
    let (model, front_amp, q_of, v_tan, kappa0, order): (EosModel, f64, &dyn Fn([f64; 3]) -> f64, f64, f64, Option<usize>) =
        match name {
            "constant" => (model, 0.0, &flat_q, 0.0, 0.0, Some(MAX_TRACE_ORDER)),
            "sine-interface" => (model, 0.02, &sine_q, 0.0, kappa, Some(1)),
            "rt-marginal" => (model, 0.02, &marginal_q, 0.0, kappa, Some(1)),
            "rel-boost" => {
                let m = if model.eps_c == 0.0 { model.with_eps(0.3) } else { model };
                (m, 0.02, &sine_q, 0.5, kappa, None)
            }
            other => {
                return Err(FbError::InvalidInput(format!(
                    "unknown scenario '{other}', expected one of {}",
                    SCENARIOS.join(", ")
                )))
            }
        };
    if name == "constant" {
        reference[0] = 0.0;
    }
    let phi0 = grid.sample_boundary(1, |x, o| o[0] = front_amp * (0..d - 1).map(|i| (TAU * x[i]).sin()).sum::<f64>());
    let lifting = lift(&InterfaceState { phi: phi0.clone(), dt_phi: vec![0.0; grid.ntan()] }, &grid, &cutoff)?;
    let pot_nc = if d == 2 { 1 } else { 3 };
    let mut potential = grid.sample(pot_nc, |x, o| {
        if d == 2 {
            o[0] = -h_tan * x[0];
        } else {
            o[1] = h_tan * x[0];
            o[2] = -h_tan * x[0];
        }
    });
    if name != "constant" {
        for (a, b) in potential.iter_mut().zip(sine_potential(&grid, 0.05, 1.0)) {
            *a += b;
        }
    }
    let h = divergence_free_init(&potential, &lifting);
    let entropy = if name == "constant" { 0.0 } else { 0.05 };
    let mut u0 = grid.sample(n, |x, o| {
        o[0] = q_of(x);
        if d > 1 {
            o[l.v(1)] = v_tan;
        }
        o[l.s()] = entropy * (TAU * x[1]).sin() * (-x[0]).exp();
    });
    for p in 0..grid.np() {
        for c in 0..d {
            u0[p * n + l.h(c)] = h[p * d + c];
        }
    }
    reference[l.v(1)] = v_tan;
    let problem = Problem { grid, model, cutoff, kappa0, reference };
    problem.validate_data(&u0, &phi0)?;
    let declared_order = match order {
        Some(m) => m,
        None => {
            let tr = compatibility_traces(&problem, &u0, &phi0, 3)?;
            let v = check_compatibility(&tr, 3);
            match v.first_failure {
                Some(0) => return Err(FbError::InvalidInput(format!("scenario '{name}' is not compatible at order 0"))),
                Some(j) => j - 1,
                None => 3,
            }
        }
    };
    Ok(InitialData { name: name.to_string(), problem, u0, phi0, declared_order })
}
