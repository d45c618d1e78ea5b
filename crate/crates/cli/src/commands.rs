//! Subcommand pipelines. Each turns a validated configuration into a
//! [`RunReport`] and writes its artifacts through an [`ArtifactWriter`].

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use fbmhd_core::aniso::aniso_norm;
use fbmhd_core::error::FbError;
use fbmhd_core::fixtures::{manufactured_pair, scenario, sheared_slab, InitialData, SlabParams};
use fbmhd_core::grid::{Grid, StField};
use fbmhd_core::linear::{dt_limit, energy_ledger, manufacture, solve_effective, SolverConfig};
use fbmhd_core::nash_moser::{
    build_approximate, compatibility_traces, convergence_report, nonlinear_march, run_nash_moser, suggested_levels,
    MarchConfig, NmConfig,
};
use fbmhd_core::state::Layout;
use fbmhd_core::systems::{boundary_inertia, lifted_a1, nonrel_limit_gap};

use crate::checks::{self, Verdict};
use crate::config::RunConfig;
use crate::output::{csv_table, decode_field, encode_field, ArtifactWriter};

/// Failure of a pipeline before it could produce verdicts.
#[derive(Debug)]
pub enum RunError {
    Numerical(FbError),
    Io(std::io::Error),
    Usage(String),
}

impl From<FbError> for RunError {
    fn from(e: FbError) -> Self {
        RunError::Numerical(e)
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e)
    }
}

/// Stable numeric code and name of each error kind, as reported in
/// `report.json`.
pub fn error_code(e: &FbError) -> (u32, &'static str) {
    match e {
        FbError::AdmissibilityViolation { .. } => (10, "AdmissibilityViolation"),
        FbError::SubluminalViolation { .. } => (11, "SubluminalViolation"),
        FbError::SuperluminalInput(_) => (12, "SuperluminalInput"),
        FbError::NormalizationViolation(_) => (13, "NormalizationViolation"),
        FbError::DegenerateLifting(_) => (20, "DegenerateLifting"),
        FbError::ProfileInfeasible(_) => (21, "ProfileInfeasible"),
        FbError::OrderExceedsResolution { .. } => (30, "OrderExceedsResolution"),
        FbError::CflViolation { .. } => (40, "CflViolation"),
        FbError::BasicStateViolation(_) => (41, "BasicStateViolation"),
        FbError::SignConditionLost { .. } => (50, "SignConditionLost"),
        FbError::MarginLost(_) => (51, "MarginLost"),
        FbError::DivergenceDetected { .. } => (52, "DivergenceDetected"),
        FbError::InvalidInput(_) => (60, "InvalidInput"),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ErrorInfo {
    pub code: u32,
    pub kind: String,
    pub message: String,
}

impl ErrorInfo {
    pub fn from_fb(e: &FbError) -> Self {
        let (code, kind) = error_code(e);
        ErrorInfo { code, kind: kind.into(), message: e.to_string() }
    }
}

/// Everything a run reports. Wall time is deliberately absent so that equal
/// inputs give byte-identical reports.
#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub command: String,
    pub seed: u64,
    pub pass: bool,
    pub verdicts: Vec<Verdict>,
    pub data: Value,
    pub error: Option<ErrorInfo>,
}

impl RunReport {
    fn new(command: &str, cfg: &RunConfig, verdicts: Vec<Verdict>, data: Value) -> Self {
        RunReport {
            command: command.into(),
            seed: cfg.seed,
            pass: verdicts.iter().all(|v| v.pass),
            verdicts,
            data,
            error: None,
        }
    }
}

fn verdict(name: &str, pass: bool, detail: String) -> Verdict {
    Verdict { name: name.into(), pass, detail, measured: Default::default() }
}

fn grid_of(cfg: &RunConfig) -> Result<Grid, RunError> {
    let g = cfg.grid();
    Ok(Grid::new(g.d, g.n1, g.nt, g.length)?)
}

fn load_scenario(cfg: &RunConfig) -> Result<InitialData, RunError> {
    let mut s = scenario(&cfg.scenario.name, grid_of(cfg)?, cfg.model())?;
    if let Some(k) = cfg.physics.kappa0 {
        s.problem.kappa0 = k;
    }
    Ok(s)
}

/// Shape and spacings of one spatial level with `nc` components; the
/// component axis is dropped for scalars.
fn level_layout(g: &Grid, nc: usize) -> (Vec<usize>, Vec<f64>) {
    let mut dims = vec![g.n1];
    let mut h = vec![g.h1()];
    for _ in 1..g.d {
        dims.push(g.nt);
        h.push(g.ht());
    }
    if nc > 1 {
        dims.push(nc);
        h.push(1.0);
    }
    (dims, h)
}

fn write_snapshots(out: &mut ArtifactWriter, cfg: &RunConfig, stem: &str, f: &StField) -> Result<usize, RunError> {
    if !cfg.wants("bin") {
        return Ok(0);
    }
    let (dims, h) = level_layout(&f.grid, f.nc);
    let mut count = 0;
    for k in (0..f.n_time).step_by(cfg.output.snapshot_every) {
        out.write(&format!("{stem}_{k:05}.bin"), &encode_field(&dims, &h, f.level(k)))?;
        count += 1;
    }
    Ok(count)
}

fn write_csv(out: &mut ArtifactWriter, cfg: &RunConfig, name: &str, header: &[&str], rows: &[Vec<f64>]) -> Result<(), RunError> {
    if cfg.wants("csv") {
        out.write(name, csv_table(header, rows).as_bytes())?;
    }
    Ok(())
}

pub fn verify_matrices(cfg: &RunConfig) -> Result<RunReport, RunError> {
    let seed = cfg.seed;
    let n = cfg.verify.samples;
    let sym = checks::symmetry_positivity(seed, n);
    let bnd = checks::boundary_structure(seed, n.div_ceil(5));
    let cons = checks::conservative_equivalence(seed, 200);
    let lim = checks::light_speed_uniformity(seed, &cfg.limit.eps, 20);

    let d = cfg.grid.d;
    let l = Layout::new(d);
    let mut u = vec![0.0; l.n()];
    u[0] = 1.5;
    for i in 1..d {
        u[l.h(i)] = 0.3;
    }
    let model = cfg.model();
    let bm = lifted_a1(&u, &vec![0.0; d - 1], 0.0, 1.0, &model, d)?;
    let inertia = boundary_inertia(&bm, 1e-10);
    let inertia_ok = inertia == (1, 1, 2 * d);
    let data = json!({
        "symmetry_max": sym.measured.get("max_relative_skew"),
        "min_eig_a0": sym.measured.get("min_eig_a0"),
        "inertia": [inertia.0, inertia.1, inertia.2],
        "limit_order": lim.measured.get("min_order"),
    });
    let inertia_v = verdict("boundary inertia", inertia_ok, format!("inertia {inertia:?} at d = {d}"));
    Ok(RunReport::new("verify-matrices", cfg, vec![sym, bnd, cons, lim, inertia_v], data))
}

/// Reads a space-time scalar field `[time, x1, tangential...]` written in
/// the binary field format.
fn read_field(path: &Path) -> Result<StField, RunError> {
    let bytes = std::fs::read(path)?;
    let (dims, h, data) = decode_field(&bytes)?;
    if dims.len() != 3 && dims.len() != 4 {
        return Err(RunError::Usage(format!("field has {} axes, expected [time, x1, x2(, x3)]", dims.len())));
    }
    let d = dims.len() - 1;
    if dims[2..].iter().any(|&m| m != dims[2]) {
        return Err(RunError::Usage("tangential extents differ".into()));
    }
    let grid = Grid::new(d, dims[1], dims[2], h[1] * (dims[1] - 1) as f64)?;
    let mut f = StField::zeros(grid, dims[0], h[0], 1, false);
    f.data = data;
    Ok(f)
}

pub fn norms(cfg: &RunConfig, input: &Path, m: Option<usize>) -> Result<RunReport, RunError> {
    let u = read_field(input)?;
    let m = m.unwrap_or(cfg.iteration.ladder_order);
    let norm = aniso_norm(&u, m)?;
    let breakdown: Vec<Value> = norm.breakdown.iter().map(|(a, v)| json!({"index": a.alpha, "value": v})).collect();
    let data = json!({"m": norm.m, "value": norm.value, "breakdown": breakdown});
    let v = verdict("anisotropic norm", norm.value.is_finite(), format!("||u||_({m},*) = {:.6e}", norm.value));
    Ok(RunReport::new("norms", cfg, vec![v], data))
}

pub fn solve_linear(cfg: &RunConfig, out: &mut ArtifactWriter) -> Result<RunReport, RunError> {
    let grid = grid_of(cfg)?;
    let basic = sheared_slab(grid, cfg.model(), SlabParams::default());
    let t_end = cfg.solver.t_end;
    let dt = match cfg.solver.dt {
        Some(dt) => dt,
        None => dt_limit(&basic, 0.0, cfg.solver.cfl)?.min(dt_limit(&basic, t_end, cfg.solver.cfl)?),
    };
    let steps = (t_end / dt).ceil().max(1.0) as usize;
    let dt = t_end / steps as f64;
    let (v, psi) = manufactured_pair(grid.d, grid.length, 0.1);
    let m = manufacture(&basic, steps + 1, dt, &v, &psi)?;
    let scfg = SolverConfig { cfl: cfg.solver.cfl, dissipation: cfg.solver.dissipation, ..SolverConfig::default() };
    let r = solve_effective(&basic, &m.f, &m.g, &scfg)?;
    let ledger = energy_ledger(&r);
    let mut err = r.v_dot.clone();
    err.axpy(-1.0, &m.v_dot);
    let rel_err = err.l2() / m.v_dot.l2();

    let e = &r.energy;
    let rows: Vec<Vec<f64>> = (0..e.t.len())
        .map(|k| {
            let balance = if k == 0 { 0.0 } else { ledger.per_step[k - 1] };
            vec![e.t[k], e.e0[k], e.boundary_energy[k], e.volume[k], e.source[k], e.sigma_flux[k], e.outer_flux[k], balance]
        })
        .collect();
    write_csv(
        out,
        cfg,
        "energy.csv",
        &["t", "E0", "boundary_energy", "volume", "source", "sigma_flux", "outer_flux", "balance_residual"],
        &rows,
    )?;
    let snaps = write_snapshots(out, cfg, "w", &r.w)?;
    let data = json!({
        "steps": steps,
        "dt": dt,
        "relative_error": rel_err,
        "bc_residual": r.bc_residual,
        "energy_balance_relative": ledger.relative,
        "energy_ratio": (r.w.l2() + r.psi.l2()) / r.f_tilde.l2(),
        "snapshots": snaps,
    });
    let v = verdict(
        "linear solve",
        ledger.boundary_term_nonnegative && rel_err < 0.1,
        format!(
            "{steps} steps, manufactured-solution error {rel_err:.3e}, boundary energy nonnegative: {}",
            ledger.boundary_term_nonnegative
        ),
    );
    Ok(RunReport::new("solve-linear", cfg, vec![v], data))
}

pub fn nash_moser(cfg: &RunConfig, out: &mut ArtifactWriter) -> Result<RunReport, RunError> {
    let s = load_scenario(cfg)?;
    let pb = &s.problem;
    let t_end = cfg.solver.t_end;
    let nt = match cfg.solver.dt {
        Some(dt) => (t_end / dt).ceil() as usize + 1,
        None => suggested_levels(pb, &s.u0, &s.phi0, t_end, cfg.solver.cfl, 0.8)?,
    };
    let tr = compatibility_traces(pb, &s.u0, &s.phi0, 3)?;
    let ap = build_approximate(pb, &tr, t_end, nt)?;
    let it = &cfg.iteration;
    let nm = NmConfig {
        theta0: it.theta0,
        alpha: it.alpha,
        n_max: it.n_max,
        tol: it.tol,
        eps_nm: it.eps_nm,
        ladder_order: it.ladder_order,
        splits: it.splits,
        solver: SolverConfig { cfl: cfg.solver.cfl, dissipation: cfg.solver.dissipation, ..SolverConfig::default() },
    };
    let run = run_nash_moser(pb, &ap, &nm);

    let mut header: Vec<String> = vec!["n".into(), "theta_n".into()];
    header.extend((0..=it.ladder_order).map(|s| format!("delta_norm_{s}")));
    for h in ["e_norm", "E_norm", "residual", "boundary_residual", "kinematic_residual", "h_normal"] {
        header.push(h.into());
    }
    let rows: Vec<Vec<f64>> = run
        .records
        .iter()
        .map(|r| {
            let mut row = vec![r.n as f64, r.theta];
            row.extend(&r.delta_norms);
            row.extend([r.e_norm, r.acc_e_norm, r.residual, r.boundary_residual, r.kinematic_residual, r.h_normal]);
            row
        })
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(out, cfg, "nash_moser.csv", &header, &rows)?;

    let failed_at = run.failure.as_ref().map(|(k, _)| *k);
    let report = convergence_report(&run.records, it.alpha, failed_at);
    let mut verdicts = vec![verdict(
        "nash-moser convergence",
        report.pass && run.failure.is_none(),
        format!("{} steps, final top-rung increment {:.3e}", report.steps, report.final_delta),
    )];
    let error = run.failure.as_ref().map(|(k, e)| {
        verdicts.push(verdict("nash-moser failure", false, format!("step {k}: {e}")));
        ErrorInfo::from_fb(e)
    });
    let data = json!({ "scenario": s.name, "levels": nt, "report": report });
    let mut rep = RunReport::new("nash-moser", cfg, verdicts, data);
    rep.error = error;
    Ok(rep)
}

pub fn march(cfg: &RunConfig, out: &mut ArtifactWriter) -> Result<RunReport, RunError> {
    let s = load_scenario(cfg)?;
    let pb = &s.problem;
    let t_end = cfg.solver.t_end;
    let base = MarchConfig { cfl: cfg.solver.cfl, dissipation: cfg.solver.dissipation, ..MarchConfig::new(1.0, 0) };
    let dt = match cfg.solver.dt {
        Some(dt) => dt,
        None => {
            let probe = nonlinear_march(pb, &s.u0, &s.phi0, &MarchConfig { check_cfl: false, ..base }, None)?;
            cfg.solver.cfl * probe.dt_limit
        }
    };
    let steps = (t_end / dt).ceil().max(1.0) as usize;
    let m = nonlinear_march(pb, &s.u0, &s.phi0, &MarchConfig { dt: t_end / steps as f64, n_steps: steps, ..base }, None)?;
    let rows: Vec<Vec<f64>> = m.samples.iter().map(|c| vec![c.t, c.h_normal, c.div_h, c.rt_margin]).collect();
    write_csv(out, cfg, "constraints.csv", &["t", "h_normal", "div_h", "rt_margin"], &rows)?;
    let snaps = write_snapshots(out, cfg, "u", &m.u)?;
    let worst = m.samples.iter().map(|c| c.h_normal.max(c.div_h)).fold(0.0, f64::max);
    let margin = m.samples.iter().map(|c| c.rt_margin).fold(f64::INFINITY, f64::min);
    let data = json!({
        "scenario": s.name,
        "steps": steps,
        "dt": t_end / steps as f64,
        "max_constraint": worst,
        "min_rt_margin": margin,
        "snapshots": snaps,
    });
    let v = verdict("march", true, format!("{steps} steps, max constraint violation {worst:.3e}, min d1 q {margin:.4}"));
    Ok(RunReport::new("march", cfg, vec![v], data))
}

pub fn limit_study(cfg: &RunConfig) -> Result<RunReport, RunError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.grid.d;
    let l = Layout::new(d);
    let model = cfg.model();
    let mut tables = Vec::new();
    let mut min_order = f64::INFINITY;
    for _ in 0..20 {
        let mut u = vec![0.0; l.n()];
        for i in 0..d {
            u[l.v(i)] = rng.gen_range(-0.5..0.5);
            u[l.h(i)] = rng.gen_range(-1.0..1.0);
        }
        u[0] = rng.gen_range(0.5..2.0);
        u[l.s()] = rng.gen_range(-0.5..0.5);
        let t = nonrel_limit_gap(&u, &model, d, &cfg.limit.eps)?;
        min_order = min_order.min(t.order);
        tables.push(t);
    }
    let v = verdict(
        "non-relativistic limit",
        min_order >= 1.9,
        format!("min fitted order {min_order:.3} over {} states", tables.len()),
    );
    let data = json!({ "eps": cfg.limit.eps, "min_order": min_order, "tables": tables });
    Ok(RunReport::new("limit-study", cfg, vec![v], data))
}
