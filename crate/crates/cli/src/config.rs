//! Run configuration: TOML text with fixed sections and validation that
//! reports every violated invariant at once.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use fbmhd_core::aniso::DEFAULT_MAX_ORDER;
use fbmhd_core::eos::EosModel;
use fbmhd_core::fd::MIN_POINTS;
use fbmhd_core::fixtures::SCENARIOS;
use fbmhd_core::grid::Grid;
use fbmhd_core::interface::Cutoff;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("parse error at line {line}{}: {message}", key.as_ref().map(|k| format!(" (key {k})")).unwrap_or_default())]
    Parse { line: usize, key: Option<String>, message: String },
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct Physics {
    pub eps_c: f64,
    pub gamma: f64,
    pub p_inf: f64,
    pub rho_min: f64,
    pub rho_max: f64,
    /// Overrides the scenario's nominal Rayleigh-Taylor constant.
    pub kappa0: Option<f64>,
}

impl Default for Physics {
    fn default() -> Self {
        Physics { eps_c: 0.0, gamma: 5.0 / 3.0, p_inf: 1.0, rho_min: 0.1, rho_max: 10.0, kappa0: None }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub d: usize,
    pub n1: usize,
    pub n_tangential: usize,
    #[serde(rename = "L")]
    pub length: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection { d: 3, n1: 33, n_tangential: 16, length: 4.0 }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct Solver {
    /// Fixed step; derived from `cfl` when absent.
    pub dt: Option<f64>,
    pub t_end: f64,
    pub cfl: f64,
    pub dissipation: f64,
}

impl Default for Solver {
    fn default() -> Self {
        Solver { dt: None, t_end: 0.1, cfl: 0.4, dissipation: 0.01 }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct Iteration {
    pub theta0: f64,
    pub alpha: f64,
    pub n_max: usize,
    pub eps_nm: f64,
    pub tol: f64,
    pub ladder_order: usize,
    pub splits: bool,
}

impl Default for Iteration {
    fn default() -> Self {
        Iteration { theta0: 4.0, alpha: 12.0, n_max: 20, eps_nm: 1.0, tol: 1e-10, ladder_order: 6, splits: false }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub name: String,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario { name: "sine-interface".into() }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct Output {
    pub dir: String,
    /// Every how many time levels a binary snapshot is written.
    pub snapshot_every: usize,
    pub formats: Vec<String>,
}

impl Default for Output {
    fn default() -> Self {
        Output { dir: "fbmhd-out".into(), snapshot_every: 10, formats: vec!["csv".into(), "json".into(), "bin".into()] }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct Limit {
    pub eps: Vec<f64>,
}

impl Default for Limit {
    fn default() -> Self {
        Limit { eps: vec![0.2, 0.1, 0.05] }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct Verify {
    pub samples: usize,
}

impl Default for Verify {
    fn default() -> Self {
        Verify { samples: 1000 }
    }
}

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub physics: Physics,
    pub grid: GridSection,
    pub solver: Solver,
    pub iteration: Iteration,
    pub scenario: Scenario,
    pub output: Output,
    pub limit: Limit,
    pub verify: Verify,
}

pub const FORMATS: [&str; 3] = ["csv", "json", "bin"];

impl RunConfig {
    pub fn model(&self) -> EosModel {
        EosModel {
            rho_min: self.physics.rho_min,
            rho_max: self.physics.rho_max,
            ..EosModel::stiffened(self.physics.gamma, self.physics.p_inf).with_eps(self.physics.eps_c)
        }
    }

    pub fn grid(&self) -> Grid {
        Grid { d: self.grid.d, n1: self.grid.n1, nt: self.grid.n_tangential, length: self.grid.length }
    }

    pub fn wants(&self, format: &str) -> bool {
        self.output.formats.iter().any(|f| f == format)
    }

    /// Every violated invariant, in section order.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let mut need = |ok: bool, msg: String| {
            if !ok {
                v.push(msg);
            }
        };
        let p = &self.physics;
        need(p.eps_c.is_finite() && p.eps_c >= 0.0, format!("physics.eps_c = {} must be finite and nonnegative", p.eps_c));
        need(p.gamma > 1.0, format!("physics.gamma = {} must exceed 1", p.gamma));
        need(p.p_inf >= 0.0, format!("physics.p_inf = {} must be nonnegative", p.p_inf));
        need(
            p.rho_min > 0.0 && p.rho_min < p.rho_max,
            format!("physics.rho_min = {} and physics.rho_max = {} must satisfy 0 < rho_min < rho_max", p.rho_min, p.rho_max),
        );
        if let Some(k) = p.kappa0 {
            need(k >= 0.0, format!("physics.kappa0 = {k} must be nonnegative"));
        }
        let g = &self.grid;
        need(g.d == 2 || g.d == 3, format!("grid.d = {} must be 2 or 3", g.d));
        need(g.n1 >= MIN_POINTS, format!("grid.n1 = {} is below the {MIN_POINTS}-point width of the fourth-order stencils", g.n1));
        need(
            g.n_tangential >= MIN_POINTS,
            format!("grid.n_tangential = {} is below the {MIN_POINTS}-point width of the fourth-order stencils", g.n_tangential),
        );
        let support = Cutoff::default().support;
        need(g.length > support, format!("grid.L = {} must exceed the cutoff support {support}", g.length));
        let s = &self.solver;
        if let Some(dt) = s.dt {
            need(dt > 0.0, format!("solver.dt = {dt} must be positive"));
        }
        need(s.t_end > 0.0, format!("solver.t_end = {} must be positive", s.t_end));
        need(s.cfl > 0.0 && s.cfl <= 1.0, format!("solver.cfl = {} must lie in (0, 1]", s.cfl));
        need(s.dissipation >= 0.0, format!("solver.dissipation = {} must be nonnegative", s.dissipation));
        let it = &self.iteration;
        need(it.theta0 >= 1.0, format!("iteration.theta0 = {} must be at least 1", it.theta0));
        need(it.alpha >= 12.0, format!("iteration.alpha = {} must be at least 12", it.alpha));
        need(it.n_max >= 1, "iteration.n_max must be at least 1".into());
        need(it.eps_nm > 0.0, format!("iteration.eps_nm = {} must be positive", it.eps_nm));
        need(it.tol >= 0.0, format!("iteration.tol = {} must be nonnegative", it.tol));
        need(
            it.ladder_order <= DEFAULT_MAX_ORDER,
            format!("iteration.ladder_order = {} exceeds the supported {DEFAULT_MAX_ORDER}", it.ladder_order),
        );
        need(
            SCENARIOS.contains(&self.scenario.name.as_str()),
            format!("scenario.name = '{}' is not one of {}", self.scenario.name, SCENARIOS.join(", ")),
        );
        let o = &self.output;
        need(!o.dir.is_empty(), "output.dir must not be empty".into());
        need(o.snapshot_every >= 1, "output.snapshot_every must be at least 1".into());
        for f in &o.formats {
            need(FORMATS.contains(&f.as_str()), format!("output.formats entry '{f}' is not one of {}", FORMATS.join(", ")));
        }
        need(
            self.limit.eps.len() >= 2 && self.limit.eps.iter().all(|e| *e > 0.0 && e.is_finite()),
            "limit.eps needs at least two positive values".into(),
        );
        need(self.verify.samples >= 1, "verify.samples must be at least 1".into());
        v
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|b| *b == b'\n').count() + 1
}

/// Parses and validates a configuration; missing keys take their defaults.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| {
        let line = e.span().map_or(1, |s| line_of(text, s.start));
        let key = e.span().and_then(|s| {
            let tok = text.get(s.clone())?.trim();
            (!tok.is_empty() && tok.len() < 64).then(|| tok.to_string())
        });
        ConfigError::Parse { line, key, message: e.message().to_string() }
    })?;
    let v = cfg.violations();
    if v.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError::Validation(v))
    }
}
