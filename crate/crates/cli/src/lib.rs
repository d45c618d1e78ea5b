//! Command-line orchestration: configuration, subcommand dispatch and
//! deterministic artifact output.

pub mod checks;
pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use commands::{ErrorInfo, RunError, RunReport};
use config::{parse_config, RunConfig};
use output::ArtifactWriter;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "fbmhd", version, about = "Plasma-vacuum free boundary MHD: verification and solver runs")]
pub struct Cli {
    /// TOML configuration; defaults apply to every missing key.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides `output.dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Symmetry, positivity, boundary inertia and light-speed limit of the assembled matrices.
    VerifyMatrices,
    /// Anisotropic norm of a space-time scalar field file.
    Norms {
        #[arg(long)]
        input: PathBuf,
        /// Order of the norm; defaults to `iteration.ladder_order`.
        #[arg(long)]
        m: Option<usize>,
    },
    /// Manufactured-solution run of the effective linear solver.
    SolveLinear,
    /// Nash-Moser iteration on the configured scenario.
    NashMoser,
    /// Explicit nonlinear march with constraint monitoring.
    March,
    /// Relativistic-to-classical matrix gaps over `limit.eps`.
    LimitStudy,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::VerifyMatrices => "verify-matrices",
            Command::Norms { .. } => "norms",
            Command::SolveLinear => "solve-linear",
            Command::NashMoser => "nash-moser",
            Command::March => "march",
            Command::LimitStudy => "limit-study",
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, String> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            parse_config(&text).map_err(|e| format!("{}: {e}", path.display()))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.out {
        cfg.output.dir = dir.to_string_lossy().into_owned();
    }
    Ok(cfg)
}

/// `FBMHD_THREADS` caps the worker pool; unset or unparsable leaves the
/// default.
fn configure_threads() {
    if let Some(n) = std::env::var("FBMHD_THREADS").ok().and_then(|s| s.parse::<usize>().ok()).filter(|n| *n > 0) {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn dispatch(cmd: &Command, cfg: &RunConfig, out: &mut ArtifactWriter) -> Result<RunReport, RunError> {
    match cmd {
        Command::VerifyMatrices => commands::verify_matrices(cfg),
        Command::Norms { input, m } => commands::norms(cfg, input, *m),
        Command::SolveLinear => commands::solve_linear(cfg, out),
        Command::NashMoser => commands::nash_moser(cfg, out),
        Command::March => commands::march(cfg, out),
        Command::LimitStudy => commands::limit_study(cfg),
    }
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_PASS };
        }
    };
    let cfg = match load_config(&cli) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("{msg}");
            return EXIT_USAGE;
        }
    };
    configure_threads();
    let mut out = match ArtifactWriter::new(&cfg.output.dir) {
        Ok(w) => w,
        Err(e) => {
            eprintln!("cannot create {}: {e}", cfg.output.dir);
            return EXIT_RUNTIME;
        }
    };
    let name = cli.command.name();
    let start = std::time::Instant::now();
    let (report, code) = match dispatch(&cli.command, &cfg, &mut out) {
        Ok(r) => {
            let code = if r.error.is_some() {
                EXIT_RUNTIME
            } else if r.pass {
                EXIT_PASS
            } else {
                EXIT_CHECK_FAILED
            };
            (r, code)
        }
        Err(RunError::Usage(msg)) => {
            eprintln!("{name}: {msg}");
            return EXIT_USAGE;
        }
        Err(e) => {
            let info = match &e {
                RunError::Numerical(fe) => ErrorInfo::from_fb(fe),
                RunError::Io(io) => ErrorInfo { code: 70, kind: "IoError".into(), message: io.to_string() },
                RunError::Usage(_) => unreachable!(),
            };
            let r = RunReport {
                command: name.into(),
                seed: cfg.seed,
                pass: false,
                verdicts: Vec::new(),
                data: serde_json::Value::Null,
                error: Some(info),
            };
            (r, EXIT_RUNTIME)
        }
    };
    for v in &report.verdicts {
        println!("[{}] {}: {}", if v.pass { "PASS" } else { "FAIL" }, v.name, v.detail);
    }
    if let Some(e) = &report.error {
        eprintln!("error {} ({}): {}", e.code, e.kind, e.message);
    }
    eprintln!("{name} finished in {:.2} s", start.elapsed().as_secs_f64());
    let written = serde_json::to_string_pretty(&report)
        .map_err(std::io::Error::other)
        .and_then(|text| if cfg.wants("json") { out.write("report.json", (text + "\n").as_bytes()) } else { Ok(()) })
        .and_then(|_| out.finish());
    if let Err(e) = written {
        eprintln!("writing artifacts to {}: {e}", cfg.output.dir);
        return EXIT_RUNTIME;
    }
    code
}
