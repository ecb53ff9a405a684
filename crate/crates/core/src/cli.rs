//! Batch front end. Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | at least one verification check failed |
//! | 2 | bad input: usage, parse, validation, unwritable output |
//! | 3 | Riccati solver error |
//! | 4 | simulation became non-finite |

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::feedback::{gain_from_riccati, optimal_value};
use crate::montecarlo::{estimate_cost, Control, EstimateRow, McError};
use crate::problem::{canned_problem, validate, BenchmarkId, LqProblem};
use crate::report::{write_rows_to_path, Format};
use crate::riccati::{solve_direct, solve_quasilinearization, RiccatiError, TimeGrid};
use crate::verify::{run_suite, write_reports, SuiteConfig, VerifyError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_NON_FINITE: i32 = 4;

/// Worker-count override read by the binary.
pub const THREADS_ENV: &str = "JUMPLQ_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "jumplq",
    version,
    about = "Riccati solver and Monte Carlo verifier for jump-diffusion LQ control"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the Riccati system and export K, diagnostics and the feedback gain.
    Solve(SolveArgs),
    /// Monte Carlo estimate of the cost under the Riccati feedback or zero control.
    Simulate(SimulateArgs),
    /// Run the full check suite; exit 1 if any check fails.
    Verify(VerifyArgs),
    /// Print a canned benchmark as a problem file.
    Benchmark {
        /// e.g. scalar-riccati, two-regime-switching, random-psd:seed=7,n=2,m=1,d=2,k=1
        id: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// JSON problem file.
    #[arg(long)]
    problem: Option<PathBuf>,
    /// Canned benchmark id instead of a file.
    #[arg(long)]
    benchmark: Option<String>,
}

#[derive(Debug, Args)]
struct Common {
    #[command(flatten)]
    source: Source,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    /// Output directory; created if missing.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SolveMethod {
    Direct,
    Quasilinearization,
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum, default_value_t = SolveMethod::Direct)]
    method: SolveMethod,
    #[arg(long, default_value_t = crate::riccati::DEFAULT_TOL)]
    tol: f64,
    #[arg(long, default_value_t = crate::riccati::DEFAULT_MAX_ITER)]
    max_iter: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ControlArg {
    Feedback,
    Zero,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 10_000)]
    paths: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = ControlArg::Feedback)]
    control: ControlArg,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 10_000)]
    paths: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = crate::riccati::DEFAULT_TOL)]
    tol: f64,
    #[arg(long, default_value_t = crate::riccati::DEFAULT_MAX_ITER)]
    max_iter: usize,
    /// Negate the feedback gain before the gradient and Hamilton checks.
    #[arg(long)]
    flip_gain_sign: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Solve,
    Simulate,
    Verify,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProblemSource {
    File(PathBuf),
    Benchmark(String),
}

/// Resolved settings of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: ProblemSource,
    pub command: CommandKind,
    pub steps: usize,
    pub paths: usize,
    pub seed: u64,
    pub tol: f64,
    pub max_iter: usize,
    pub out_path: Option<PathBuf>,
    pub format: Format,
}

impl RunConfig {
    fn check(&self) -> Result<(), String> {
        if self.steps < 1 {
            return Err("--steps must be at least 1".into());
        }
        if self.paths < 2 {
            return Err("--paths must be at least 2".into());
        }
        if !(self.tol > 0.0) {
            return Err("--tol must be positive".into());
        }
        Ok(())
    }
}

fn config(command: CommandKind, common: &Common, paths: usize, seed: u64, tol: f64, max_iter: usize) -> RunConfig {
    let problem = match (&common.source.problem, &common.source.benchmark) {
        (Some(p), _) => ProblemSource::File(p.clone()),
        (None, Some(b)) => ProblemSource::Benchmark(b.clone()),
        (None, None) => unreachable!("clap enforces one source"),
    };
    RunConfig {
        problem,
        command,
        steps: common.steps,
        paths,
        seed,
        tol,
        max_iter,
        out_path: common.out.clone(),
        format: common.format.into(),
    }
}

/// Failure carrying its exit code.
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }
}

impl From<RiccatiError> for Failure {
    fn from(e: RiccatiError) -> Self {
        match e {
            RiccatiError::Invalid(msgs) => Failure::input(msgs.join("\n")),
            e => Failure {
                code: EXIT_SOLVER,
                message: e.to_string(),
            },
        }
    }
}

impl From<McError> for Failure {
    fn from(e: McError) -> Self {
        match e {
            McError::NonFinite { .. } => Failure {
                code: EXIT_NON_FINITE,
                message: e.to_string(),
            },
            McError::Invalid(msgs) => Failure::input(msgs.join("\n")),
            e => Failure::input(e.to_string()),
        }
    }
}

impl From<VerifyError> for Failure {
    fn from(e: VerifyError) -> Self {
        match e {
            VerifyError::Riccati(e) => e.into(),
            VerifyError::Mc(e) => e.into(),
            e => Failure::input(e.to_string()),
        }
    }
}

impl From<crate::report::ExportError> for Failure {
    fn from(e: crate::report::ExportError) -> Self {
        Failure::input(format!("writing output: {e}"))
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::input(e.to_string())
    }
}

fn load(src: &ProblemSource) -> Result<LqProblem, Failure> {
    let p = match src {
        ProblemSource::File(path) => LqProblem::from_json_file(path).map_err(|e| Failure::input(e.to_string()))?,
        ProblemSource::Benchmark(id) => {
            let id: BenchmarkId = id
                .parse()
                .map_err(|e: crate::problem::ProblemError| Failure::input(e.to_string()))?;
            canned_problem(&id)
        }
    };
    let report = validate(&p);
    if !report.is_empty() {
        return Err(Failure::input(format!(
            "problem failed validation:\n{}",
            report.messages().join("\n")
        )));
    }
    Ok(p)
}

fn out_file(cfg: &RunConfig, stem: &str) -> Result<Option<PathBuf>, Failure> {
    match &cfg.out_path {
        None => Ok(None),
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            Ok(Some(dir.join(format!("{stem}.{}", cfg.format.extension()))))
        }
    }
}

fn fmt_matrix(rows: &[Vec<f64>]) -> String {
    let rows: Vec<String> = rows
        .iter()
        .map(|r| format!("[{}]", r.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ")))
        .collect();
    format!("[{}]", rows.join(", "))
}

fn cmd_solve(cfg: &RunConfig, method: SolveMethod, out: &mut dyn Write) -> Result<i32, Failure> {
    let p = load(&cfg.problem)?;
    let grid = TimeGrid::for_problem(&p, cfg.steps);
    let sol = match method {
        SolveMethod::Direct => solve_direct(&p, &grid)?,
        SolveMethod::Quasilinearization => solve_quasilinearization(&p, &grid, cfg.tol, cfg.max_iter)?.0,
    };
    let law = gain_from_riccati(&p, &sol)?;
    if let Some(path) = out_file(cfg, "solution")? {
        write_rows_to_path(&path, &sol.solution_rows(), cfg.format)?;
    }
    if let Some(path) = out_file(cfg, "diagnostics")? {
        write_rows_to_path(&path, &sol.diagnostics_rows(), cfg.format)?;
    }
    if let Some(path) = out_file(cfg, "gains")? {
        write_rows_to_path(&path, &law.rows(), cfg.format)?;
    }
    for r in 0..sol.regimes() {
        writeln!(out, "K(0) regime {r}: {}", fmt_matrix(&sol.k_at(0, r).to_rows()))?;
    }
    writeln!(out, "iterations: {}", sol.diagnostics.iterations)?;
    writeln!(out, "optimal value: {}", optimal_value(&sol, &p.x0, p.r0))?;
    Ok(EXIT_OK)
}

fn cmd_simulate(cfg: &RunConfig, control: ControlArg, out: &mut dyn Write) -> Result<i32, Failure> {
    let p = load(&cfg.problem)?;
    let grid = TimeGrid::for_problem(&p, cfg.steps);
    let (label, ctrl) = match control {
        ControlArg::Feedback => {
            let sol = solve_direct(&p, &grid)?;
            ("feedback", Control::Feedback(gain_from_riccati(&p, &sol)?))
        }
        ControlArg::Zero => ("zero", Control::zero(&p, &grid)),
    };
    let est = estimate_cost(&p, &ctrl, &grid, cfg.paths, cfg.seed)?;
    let row = EstimateRow {
        label: label.into(),
        mean: est.mean,
        stderr: est.stderr,
        paths: est.paths,
        steps: cfg.steps,
        seed: cfg.seed,
    };
    if let Some(path) = out_file(cfg, "estimates")? {
        write_rows_to_path(&path, std::slice::from_ref(&row), cfg.format)?;
    }
    writeln!(
        out,
        "{label}: mean {} stderr {} paths {}",
        row.mean, row.stderr, row.paths
    )?;
    Ok(EXIT_OK)
}

fn cmd_verify(cfg: &RunConfig, flip_gain_sign: bool, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, Failure> {
    let p = load(&cfg.problem)?;
    let suite = SuiteConfig {
        steps: cfg.steps,
        n_paths: cfg.paths,
        seed: cfg.seed,
        tol: cfg.tol,
        max_iter: cfg.max_iter,
        flip_gain_sign,
        ..SuiteConfig::default()
    };
    let reports = run_suite(&p, &suite)?;
    if let Some(path) = out_file(cfg, "report")? {
        write_reports(&path, &reports, cfg.format)?;
    }
    for r in &reports {
        writeln!(
            out,
            "{} {}: {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.details
        )?;
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(EXIT_OK)
    } else {
        writeln!(err, "failed checks: {}", failed.join(", "))?;
        Ok(EXIT_CHECK_FAILED)
    }
}

fn cmd_benchmark(id: &str, path: Option<&Path>, out: &mut dyn Write) -> Result<i32, Failure> {
    let p = load(&ProblemSource::Benchmark(id.to_string()))?;
    let json = p.to_json_string();
    match path {
        Some(path) => std::fs::write(path, json + "\n")?,
        None => writeln!(out, "{json}")?,
    }
    Ok(EXIT_OK)
}

/// Parses `args` (program name first) and runs the command; returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(err, "{text}")
            } else {
                write!(out, "{text}")
            };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Solve(a) => {
            let cfg = config(CommandKind::Solve, &a.common, 2, 0, a.tol, a.max_iter);
            cfg.check()
                .map_err(Failure::input)
                .and_then(|_| cmd_solve(&cfg, a.method, out))
        }
        Command::Simulate(a) => {
            let cfg = config(
                CommandKind::Simulate,
                &a.common,
                a.paths,
                a.seed,
                crate::riccati::DEFAULT_TOL,
                0,
            );
            cfg.check()
                .map_err(Failure::input)
                .and_then(|_| cmd_simulate(&cfg, a.control, out))
        }
        Command::Verify(a) => {
            let cfg = config(CommandKind::Verify, &a.common, a.paths, a.seed, a.tol, a.max_iter);
            cfg.check()
                .map_err(Failure::input)
                .and_then(|_| cmd_verify(&cfg, a.flip_gain_sign, out, err))
        }
        Command::Benchmark { id, out: path } => cmd_benchmark(id, path.as_deref(), out),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

/// Sizes the global worker pool from [`THREADS_ENV`] when set.
pub fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| format!("{THREADS_ENV} must be a positive integer, got `{raw}`"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}
