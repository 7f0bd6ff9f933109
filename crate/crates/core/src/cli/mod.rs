//! Command-line front end.
//!
//! Exit codes: 0 on success, 2 for configuration errors, 1 for anything else.
//! Errors are reported as one JSON object on stderr.

pub mod external;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::acquisition::{CostModel, ValueKind};
use crate::camera::{final_surrogate, repeat, run, AggregatePoint, Mode, Problem, RunConfig, RunRecord};
use crate::mfgp::InputFidelityPoint;
use crate::testbed::{brute_force_pf, BenchmarkProblem};
use crate::{Error, Result};

/// Seed of the brute-force truth used to score runs; shared by all repetitions.
pub const TRUTH_SEED: u64 = 0x7275_7468;

#[derive(Parser, Debug)]
#[command(
    name = "camera",
    version,
    about = "Cost-aware adaptive multifidelity reliability analysis"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run one or more repetitions of an experiment and write artifacts.
    Run(RunArgs),
    /// Brute-force failure probability of a benchmark at the highest fidelity.
    Truth(TruthArgs),
    /// Repeat an experiment over several cost-model decay rates.
    CostSweep(SweepArgs),
    /// Run once and export the final surrogate mean on a 2D lattice.
    Contour(ContourArgs),
    /// Parse and validate a config file.
    ValidateConfig { path: PathBuf },
}

#[derive(Args, Debug, Clone, Default)]
pub struct Overrides {
    /// JSON or TOML config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub problem: Option<String>,
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub budget: Option<f64>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub seed_count: Option<usize>,
    #[arg(long, value_parser = parse_value_kind)]
    pub value: Option<ValueKind>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub pool_size: Option<usize>,
    #[arg(long)]
    pub components: Option<usize>,
    #[arg(long)]
    pub n_is: Option<usize>,
    #[arg(long)]
    pub outer_candidates: Option<usize>,
    #[arg(long)]
    pub inner_grid: Option<usize>,
    #[arg(long)]
    pub fantasies: Option<usize>,
    #[arg(long)]
    pub refit_stride: Option<usize>,
    #[arg(long)]
    pub per_iteration_pf: bool,
    #[arg(long)]
    pub true_pf: Option<f64>,
    #[arg(long)]
    pub truth_samples: Option<usize>,
}

fn parse_value_kind(s: &str) -> std::result::Result<ValueKind, String> {
    match s {
        "bichon" => Ok(ValueKind::Bichon),
        "ranjan" => Ok(ValueKind::Ranjan),
        other => Err(format!("unknown value function `{other}` (bichon, ranjan)")),
    }
}

impl clap::builder::ValueParserFactory for Mode {
    type Parser = clap::builder::ValueParser;

    fn value_parser() -> Self::Parser {
        clap::builder::ValueParser::new(|s: &str| s.parse::<Mode>().map_err(|e| e.to_string()))
    }
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[command(flatten)]
    pub overrides: Overrides,
    #[arg(long, default_value_t = 1)]
    pub reps: usize,
    /// Artifact directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Points of the shared cost grid in the aggregate CSV.
    #[arg(long, default_value_t = 50)]
    pub grid_points: usize,
}

#[derive(Args, Debug)]
pub struct TruthArgs {
    #[arg(long)]
    pub problem: String,
    #[arg(long, default_value_t = 1_000_000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub overrides: Overrides,
    /// Comma-separated decay rates of the exponential cost model.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub c1: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    /// Also run the single-fidelity baseline (rows with an empty `c1`).
    #[arg(long)]
    pub baseline: bool,
    #[arg(long, default_value_t = 50)]
    pub grid_points: usize,
    /// Output CSV.
    #[arg(long, default_value = "cost_sweep.csv")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ContourArgs {
    #[command(flatten)]
    pub overrides: Overrides,
    #[arg(long, default_value_t = 200)]
    pub resolution: usize,
    /// Output CSV with columns `x1,x2,mu,sigma`.
    #[arg(long, default_value = "contour.csv")]
    pub out: PathBuf,
}

/// Reads a JSON config, or TOML when the extension is `.toml`.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
    let cfg: RunConfig = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| Error::config(path.display().to_string(), e.message().to_string()))?
    } else {
        serde_json::from_str(&text).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?
    };
    cfg.validate()?;
    Ok(cfg)
}

impl Overrides {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => load_config(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.problem {
            c.problem = v.clone();
        }
        if let Some(v) = self.mode {
            c.mode = v;
        }
        if let Some(v) = self.budget {
            c.budget = v;
        }
        if let Some(v) = self.max_iterations {
            c.max_iterations = Some(v);
        }
        if let Some(v) = self.seed {
            c.master_seed = v;
        }
        if let Some(v) = self.seed_count {
            c.seed_count = Some(v);
        }
        if let Some(v) = self.value {
            c.value = v;
        }
        if let Some(v) = self.eta {
            c.eta = v;
        }
        if let Some(v) = self.pool_size {
            c.biasing.pool_size = v;
        }
        if let Some(v) = self.components {
            c.biasing.components = v;
        }
        if let Some(v) = self.n_is {
            c.n_is = v;
        }
        if let Some(v) = self.outer_candidates {
            c.acquisition.outer_candidates = v;
        }
        if let Some(v) = self.inner_grid {
            c.acquisition.inner_grid_size = v;
        }
        if let Some(v) = self.fantasies {
            c.acquisition.n_fantasies = v;
        }
        if let Some(v) = self.refit_stride {
            c.refit_stride = v;
        }
        if self.per_iteration_pf {
            c.per_iteration_pf = true;
        }
        if let Some(v) = self.true_pf {
            c.true_pf = Some(v);
        }
        if let Some(v) = self.truth_samples {
            c.truth_samples = v;
        }
        c.validate()?;
        Ok(c)
    }
}

/// Problem for `config`, with the brute-force truth filled in for benchmarks.
pub fn resolve_problem(config: &RunConfig) -> Result<Problem> {
    Problem::from_config(config)?.with_truth(config.truth_samples, TRUTH_SEED)
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: &'a str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    path: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    iteration: Option<usize>,
}

/// One-line JSON description of an error.
pub fn error_json(e: &Error) -> String {
    let (path, iteration) = match e {
        Error::Config { path, .. } => (Some(path.as_str()), None),
        Error::Iteration { iteration, .. } => (None, Some(*iteration)),
        _ => (None, None),
    };
    serde_json::to_string(&ErrorReport {
        error: e.kind(),
        message: e.to_string(),
        path,
        iteration,
    })
    .unwrap_or_else(|_| format!("{{\"error\":\"{}\"}}", e.kind()))
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } => 2,
        _ => 1,
    }
}

pub fn summary_line(stem: &str, r: &RunRecord) -> String {
    let (p, v) = r
        .estimate
        .as_ref()
        .map_or((f64::NAN, f64::NAN), |e| (e.p_hat, e.variance));
    let mut line = format!(
        "{stem} p_hat={p:.6e} variance={v:.6e} cost={:.3} iterations={}",
        r.total_cost(),
        r.iterations()
    );
    if let Some(e) = r.relative_error {
        line.push_str(&format!(" rel_error={e:.4}"));
    }
    line
}

pub fn write_aggregate(path: &Path, points: &[AggregatePoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["cost", "mean_error", "median_error", "runs"])?;
    for p in points {
        w.write_record([
            p.cost.to_string(),
            p.mean_error.to_string(),
            p.median_error.to_string(),
            p.runs.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    if args.reps == 0 {
        return Err(Error::config("reps", "must be at least 1"));
    }
    let config = args.overrides.resolve()?;
    let problem = resolve_problem(&config)?;
    std::fs::create_dir_all(&args.out)?;
    let outcome = repeat(&config, &problem, args.reps, args.grid_points);
    let stdout = std::io::stdout();
    let mut first_error = None;
    for (r, rec) in outcome.records.into_iter().enumerate() {
        match rec {
            Ok(rec) => {
                rec.write_artifacts(&args.out, r)?;
                writeln!(stdout.lock(), "{}", summary_line(&rec.file_stem(r), &rec))?;
            }
            Err(f) => {
                f.partial.write_artifacts(&args.out, r)?;
                eprintln!("{}", error_json(&f.error));
                first_error.get_or_insert(f.error);
            }
        }
    }
    let agg = args
        .out
        .join(format!("{}_{}_aggregate.csv", problem.name, config.mode.as_str()));
    write_aggregate(&agg, &outcome.aggregate)?;
    match first_error {
        None => Ok(()),
        Some(e) => Err(e),
    }
}

/// `p_hat ± 2·SE` line printed by `truth`.
pub fn truth_line(problem: &str, n: usize, seed: u64) -> Result<String> {
    let b = BenchmarkProblem::from_name(problem).map_err(|e| Error::config("problem", e.to_string()))?;
    if n == 0 {
        return Err(Error::config("n", "must be positive"));
    }
    let est = brute_force_pf(&b, n, seed)?;
    let half = 2.0 * est.std_error();
    Ok(format!(
        "{problem} n={n} seed={seed} p_hat={:.6} ± {:.6} [{:.6}, {:.6}]",
        est.p_hat,
        half,
        (est.p_hat - half).max(0.0),
        (est.p_hat + half).min(1.0)
    ))
}

/// Aggregate rows `(c1, mode, point)` for every decay rate, plus the
/// single-fidelity baseline when requested.
pub fn cost_sweep(
    config: &RunConfig,
    c1: &[f64],
    reps: usize,
    baseline: bool,
    grid_points: usize,
) -> Result<Vec<(Option<f64>, Mode, AggregatePoint)>> {
    if c1.is_empty() {
        return Err(Error::config("c1", "need at least one value"));
    }
    if reps == 0 {
        return Err(Error::config("reps", "must be at least 1"));
    }
    if let Some(i) = c1.iter().position(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(Error::config(format!("c1[{i}]"), "must be nonnegative"));
    }
    let base = resolve_problem(config)?;
    let (c0, c2) = match &base.cost {
        CostModel::Exponential { c0, c2, .. } => (*c0, *c2),
        CostModel::Table { .. } => return Err(Error::config("cost", "cost sweep needs an exponential cost model")),
    };
    let mut rows = Vec::new();
    for &c in c1 {
        let cfg = RunConfig {
            mode: Mode::Multifidelity,
            cost: Some(CostModel::exponential(c0, c, c2)),
            ..config.clone()
        };
        let problem = Problem {
            cost: CostModel::exponential(c0, c, c2),
            ..base.clone()
        };
        let out = repeat(&cfg, &problem, reps, grid_points);
        rows.extend(out.aggregate.into_iter().map(|p| (Some(c), Mode::Multifidelity, p)));
    }
    if baseline {
        let cfg = RunConfig {
            mode: Mode::SingleFidelity,
            ..config.clone()
        };
        let out = repeat(&cfg, &base, reps, grid_points);
        rows.extend(out.aggregate.into_iter().map(|p| (None, Mode::SingleFidelity, p)));
    }
    Ok(rows)
}

fn cmd_cost_sweep(args: &SweepArgs) -> Result<()> {
    let config = args.overrides.resolve()?;
    let rows = cost_sweep(&config, &args.c1, args.reps, args.baseline, args.grid_points)?;
    let mut w = csv::Writer::from_path(&args.out)?;
    w.write_record(["c1", "mode", "cost", "mean_error", "median_error", "runs"])?;
    for (c1, mode, p) in &rows {
        w.write_record([
            c1.map(|v| v.to_string()).unwrap_or_default(),
            mode.as_str().to_string(),
            p.cost.to_string(),
            p.mean_error.to_string(),
            p.median_error.to_string(),
            p.runs.to_string(),
        ])?;
    }
    w.flush()?;
    println!("wrote {} rows to {}", rows.len(), args.out.display());
    Ok(())
}

/// Posterior mean and standard deviation at `s = 1` on a `resolution²` lattice.
pub fn contour_grid(record: &RunRecord, problem: &Problem, resolution: usize) -> Result<Vec<[f64; 4]>> {
    if problem.dim() != 2 {
        return Err(Error::config("problem", "contour export needs a 2D problem"));
    }
    if resolution < 2 {
        return Err(Error::config("resolution", "must be at least 2"));
    }
    let gp = final_surrogate(record, problem)?;
    let (lo, hi) = (problem.domain.lower(), problem.domain.upper());
    let step = |i: usize, k: usize| lo[k] + (hi[k] - lo[k]) * i as f64 / (resolution - 1) as f64;
    let points: Vec<InputFidelityPoint> = (0..resolution)
        .flat_map(|j| (0..resolution).map(move |i| (i, j)))
        .map(|(i, j)| InputFidelityPoint::new(vec![step(i, 0), step(j, 1)], 1.0))
        .collect();
    Ok(gp
        .posterior_batch(&points)
        .into_iter()
        .zip(&points)
        .map(|((m, v), p)| [p.x[0], p.x[1], m, v.sqrt()])
        .collect())
}

fn cmd_contour(args: &ContourArgs) -> Result<()> {
    let config = args.overrides.resolve()?;
    let problem = resolve_problem(&config)?;
    let record = run(&config, &problem).map_err(|f| f.error)?;
    let grid = contour_grid(&record, &problem, args.resolution)?;
    let mut w = csv::Writer::from_path(&args.out)?;
    w.write_record(["x1", "x2", "mu", "sigma"])?;
    for row in grid {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    println!("{}", summary_line(&record.file_stem(0), &record));
    Ok(())
}

fn cmd_validate(path: &Path) -> Result<()> {
    let config = load_config(path)?;
    let problem = Problem::from_config(&config)?;
    println!(
        "ok problem={} dim={} mode={} budget={}",
        problem.name,
        problem.dim(),
        config.mode.as_str(),
        config.budget
    );
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Truth(a) => {
            println!("{}", truth_line(&a.problem, a.n, a.seed)?);
            Ok(())
        }
        Command::CostSweep(a) => cmd_cost_sweep(a),
        Command::Contour(a) => cmd_contour(a),
        Command::ValidateConfig { path } => cmd_validate(path),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            exit_code(&e)
        }
    }
}
