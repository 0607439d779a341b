#![allow(clippy::type_complexity)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use leeb_core::inference::best_ate_pair;
use leeb_core::output::{
    sufficient_histogram, write_atomic, write_coverage_csv, write_curve_csv, write_histogram_csv,
    write_json, write_selection_csv,
};
use leeb_core::sim::{oracle_conditional, oracle_truth_mc};
use leeb_core::{
    bounds_curve_nocov, build_grid, coverage_study, dml_bounds, generate, load_dataset,
    oracle_truth, write_dataset, AteBounds, BandwidthReport, BoundsCurve, CoverageConfig,
    DgpSpec, EstimatorConfig, Grid, LeeError, Mode, OverlapReport, Schema,
};

#[derive(Parser)]
#[command(name = "leeb", version, about = "Bounds on dose-response functions under sample selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate bounds on a dataset.
    Estimate(EstimateArgs),
    /// Draw a dataset from a simulation design.
    Simulate(SimulateArgs),
    /// Monte Carlo coverage of the confidence intervals.
    Coverage(CoverageArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Nocov,
    Dml,
}

#[derive(Args, Clone, Default)]
struct EstimatorFlags {
    /// Estimator configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Grid as `J,min,max` or `J`.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    nu: Option<f64>,
    /// Pilot bandwidth constant.
    #[arg(long)]
    c1: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    est: EstimatorFlags,
    /// Input CSV with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Column names, overriding the configured schema.
    #[arg(long)]
    treatment: Option<String>,
    #[arg(long)]
    selection: Option<String>,
    #[arg(long)]
    outcome: Option<String>,
    /// Comma-separated covariate columns.
    #[arg(long)]
    covariates: Option<String>,
}

#[derive(Args)]
struct DesignFlags {
    /// Simulation design (JSON); defaults to the canonical design.
    #[arg(long)]
    dgp: Option<PathBuf>,
    /// Number of uniform covariates in the canonical design.
    #[arg(long, default_value_t = 0)]
    covariates: usize,
    /// Use the design whose sufficient value varies with the covariates.
    #[arg(long)]
    heterogeneous: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    design: DesignFlags,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleArg {
    Exact,
    MonteCarlo,
}

#[derive(Args)]
struct CoverageArgs {
    #[command(flatten)]
    est: EstimatorFlags,
    #[command(flatten)]
    design: DesignFlags,
    #[arg(long, default_value_t = 500)]
    reps: usize,
    #[arg(long, default_value_t = 5000)]
    n: usize,
    /// Switching pair as `d1,d2` (snapped to the grid).
    #[arg(long)]
    ate: Option<String>,
    #[arg(long, value_enum, default_value_t = OracleArg::Exact)]
    oracle: OracleArg,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: &'a str,
    message: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        return report(&e);
    }
    let result = match cli.command {
        Command::Estimate(a) => cmd_estimate(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Coverage(a) => cmd_coverage(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}

fn report(e: &anyhow::Error) -> ExitCode {
    let kind = e.downcast_ref::<LeeError>().map_or("error", |l| l.kind());
    let body = ErrorReport { error: kind, message: format!("{e:#}") };
    eprintln!("{}", serde_json::to_string(&body).unwrap_or_else(|_| body.message.clone()));
    ExitCode::from(2)
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("LEEB_THREADS") {
        let n: usize = v.parse().map_err(|_| anyhow!("LEEB_THREADS must be a positive integer, got `{v}`"))?;
        if n == 0 {
            bail!("LEEB_THREADS must be a positive integer");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn parse_list(s: &str) -> anyhow::Result<Vec<f64>> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| anyhow!("`{t}` is not a number")))
        .collect()
}

fn estimator_config(f: &EstimatorFlags) -> anyhow::Result<EstimatorConfig> {
    let mut c: EstimatorConfig = match &f.config {
        Some(p) => read_json(p)?,
        None => EstimatorConfig::default(),
    };
    if let Some(m) = f.mode {
        c.mode = match m {
            ModeArg::Nocov => Mode::Nocov,
            ModeArg::Dml => Mode::Dml,
        };
    }
    if let Some(g) = &f.grid {
        let v = parse_list(g)?;
        match v.as_slice() {
            [j] => c.grid.points = *j as usize,
            [j, lo, hi] => {
                c.grid.points = *j as usize;
                c.grid.min = Some(*lo);
                c.grid.max = Some(*hi);
            }
            _ => bail!(LeeError::Argument(format!("--grid expects J or J,min,max, got `{g}`"))),
        }
    }
    if let Some(v) = f.folds {
        c.folds = v;
    }
    if let Some(v) = f.nu {
        c.nu = v;
    }
    if let Some(v) = f.c1 {
        c.bandwidth.c1 = v;
    }
    if let Some(v) = f.seed {
        c.seed = v;
    }
    if let Some(v) = f.alpha {
        c.alpha = v;
    }
    c.validate()?;
    Ok(c)
}

#[derive(Serialize)]
struct Manifest<'a> {
    version: &'static str,
    command: &'static str,
    data: String,
    n: usize,
    config: &'a EstimatorConfig,
    grid: &'a [f64],
    pi_hat: f64,
    d_at: f64,
    sharp: bool,
    bandwidth: &'a BandwidthReport,
    trim_gps: Option<f64>,
    ate: Option<AteBounds>,
}

#[derive(Serialize)]
struct CurveJson<'a> {
    curve: &'a BoundsCurve,
    ate: Option<AteBounds>,
}

fn cmd_estimate(a: EstimateArgs) -> anyhow::Result<()> {
    let config = estimator_config(&a.est)?;
    let mut schema = config.schema.clone().unwrap_or_else(|| Schema::new("d", "s", "y"));
    if let Some(v) = &a.treatment {
        schema.treatment = v.clone();
    }
    if let Some(v) = &a.selection {
        schema.selection = v.clone();
    }
    if let Some(v) = &a.outcome {
        schema.outcome = v.clone();
    }
    if let Some(v) = &a.covariates {
        schema = schema.with_covariates(v.split(',').map(str::trim).filter(|s| !s.is_empty()));
    }
    let data = load_dataset(&a.data, &schema)?;
    let grid = config.grid.build(&data)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let out = |name: &str| a.out.join(name);

    let (curve, bandwidth, ate, hist, overlap): (BoundsCurve, BandwidthReport, Option<AteBounds>, Vec<(f64, usize)>, Option<OverlapReport>) =
        match config.mode {
            Mode::Nocov => {
                let fit = bounds_curve_nocov(&data, &grid, &config)?;
                write_selection_csv(out("selection.csv"), &fit.selection)?;
                let ate = best_ate_pair(&fit.curve).map(|(j1, j2)| fit.ate(&data, j1, j2, config.alpha));
                let hist = sufficient_histogram(grid.points(), &[fit.curve.d_at]);
                (fit.curve.clone(), fit.bandwidth.clone(), ate, hist, None)
            }
            Mode::Dml => {
                let fit = dml_bounds(&data, &grid, &config)?;
                write_json(out("overlap.json"), &fit.overlap)?;
                let ate = best_ate_pair(&fit.curve).map(|(j1, j2)| fit.ate(j1, j2, config.alpha));
                let hist = sufficient_histogram(grid.points(), &fit.sufficient_values);
                (fit.curve.clone(), fit.bandwidth.clone(), ate, hist, Some(fit.overlap))
            }
        };
    write_curve_csv(out("curve.csv"), &curve)?;
    write_json(out("curve.json"), &CurveJson { curve: &curve, ate })?;
    write_histogram_csv(out("sufficient_values.csv"), &hist)?;
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        command: "estimate",
        data: a.data.display().to_string(),
        n: data.n(),
        config: &config,
        grid: grid.points(),
        pi_hat: curve.pi_hat,
        d_at: curve.d_at,
        sharp: curve.sharp,
        bandwidth: &bandwidth,
        trim_gps: overlap.map(|o| o.trim_gps),
        ate,
    };
    write_json(out("manifest.json"), &manifest)?;
    Ok(())
}

fn design(f: &DesignFlags) -> anyhow::Result<DgpSpec> {
    let spec = match &f.dgp {
        Some(p) => read_json(p)?,
        None if f.heterogeneous => DgpSpec::heterogeneous(f.covariates),
        None => DgpSpec::canonical(f.covariates),
    };
    spec.validate()?;
    Ok(spec)
}

fn cmd_simulate(a: SimulateArgs) -> anyhow::Result<()> {
    let spec = design(&a.design)?;
    let data = generate(&spec, a.n, a.seed)?;
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let tmp = a.out.with_extension("csv.partial");
    write_dataset(&tmp, &data)?;
    fs::rename(&tmp, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(())
}

#[derive(Serialize)]
struct CoverageJson<'a> {
    design: &'a DgpSpec,
    config: &'a EstimatorConfig,
    report: &'a leeb_core::CoverageReport,
}

fn cmd_coverage(a: CoverageArgs) -> anyhow::Result<()> {
    let mut config = estimator_config(&a.est)?;
    let spec = design(&a.design)?;
    if a.est.grid.is_none() && config.grid.min.is_none() {
        config.grid.points = 20;
    }
    let grid: Grid = build_grid(config.grid.min.unwrap_or(0.2), config.grid.max.unwrap_or(0.8), config.grid.points)?;
    let truth = match (config.mode, a.oracle) {
        (Mode::Nocov, OracleArg::Exact) => oracle_truth(&spec, &grid, config.nu)?,
        (Mode::Dml, OracleArg::Exact) => oracle_conditional(&spec, &grid, config.nu)?,
        (_, OracleArg::MonteCarlo) => oracle_truth_mc(&spec, &grid, config.nu, 10_000_000, config.seed)?,
    };
    let ate_pair = match &a.ate {
        Some(s) => match parse_list(s)?.as_slice() {
            [d1, d2] => Some((grid.nearest_index(*d1), grid.nearest_index(*d2))),
            _ => bail!(LeeError::Argument(format!("--ate expects d1,d2, got `{s}`"))),
        },
        None => None,
    };
    let cov = CoverageConfig { reps: a.reps, n: a.n, seed: config.seed, ate_pair };
    let report = coverage_study(&spec, &grid, &truth, &config, &cov)?;
    fs::create_dir_all(&a.out)?;
    write_json(a.out.join("coverage.json"), &CoverageJson { design: &spec, config: &config, report: &report })?;
    write_coverage_csv(a.out.join("coverage.csv"), &report)?;
    write_atomic(a.out.join("oracle.json"), serde_json::to_string_pretty(&truth)?.as_bytes())?;
    Ok(())
}
