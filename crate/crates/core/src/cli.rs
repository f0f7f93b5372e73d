//! Command-line front end.
//!
//! Exit status is `0` on success, `1` on a runtime failure and `2` on a
//! configuration problem. Failures print one JSON object on stderr.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{Config, SampleSource};
use crate::error::{Error, Result};
use crate::estimation::{
    build_cdf_iid, estimate_b1b2_iterative, high_variance_values, CurvatureEstimate, EmpiricalCdf,
    Provenance,
};
use crate::experiments::{convergence_experiment, occupation_run, write_json, ExperimentResult};
use crate::objective::{max_gradient_error, Point};
use crate::sampler::{derive_stream, uniform_in_box, RngStream};
use crate::solver::{run, Variant};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

/// Step used for the central-difference gradient check.
const GRADCHECK_STEP: f64 = 1e-5;
const GRADCHECK_POINTS: usize = 1000;
const GRADCHECK_TOL: f64 = 1e-6;

/// Stream used for sampling points that are not part of any solver run.
const AUX_STREAM: u64 = u64::MAX - 1;

#[derive(Debug, Parser)]
#[command(name = "adavar", version, about = "State-dependent noise gradient descent toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one trajectory and write its trace.
    Run(RunArgs),
    /// Run many independent trajectories and write success-probability curves.
    Bench(BenchArgs),
    /// Estimate objective-value quantiles from sampled values.
    EstimateLevelset(EstimateArgs),
    /// Estimate curvature bounds over successive rounds of samples.
    EstimateCurvature(EstimateArgs),
    /// Histogram of where a one-dimensional chain spends its time.
    Occupancy(OccupancyArgs),
    /// Compare the analytic gradient with central differences.
    Gradcheck(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON configuration; every key is optional.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Overrides `solver.iterations`.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Include coordinate columns in the trace.
    #[arg(long)]
    pub coords: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `experiment.runs`.
    #[arg(long)]
    pub runs: Option<usize>,
    /// Overrides `experiment.eps`.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `estimation.samples`.
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct OccupancyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `experiment.bins`.
    #[arg(long)]
    pub bins: Option<usize>,
}

#[derive(Serialize)]
struct ErrorLine<'a> {
    error: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    field: Option<&'a str>,
    message: String,
}

#[derive(Serialize)]
struct LevelRow {
    level: f64,
    f_hat: f64,
    samples_used: usize,
    provenance: &'static str,
}

#[derive(Serialize)]
struct CurvatureRound {
    l: usize,
    b1_hat: f64,
    b2_hat: f64,
    f_star_hat: f64,
    alpha_hat: Option<f64>,
}

#[derive(Serialize)]
struct CurvatureReport {
    rounds: Vec<CurvatureRound>,
}

impl From<&[CurvatureEstimate]> for CurvatureReport {
    fn from(rounds: &[CurvatureEstimate]) -> Self {
        CurvatureReport {
            rounds: rounds
                .iter()
                .map(|r| CurvatureRound {
                    l: r.round,
                    b1_hat: r.b1_hat,
                    b2_hat: r.b2_hat,
                    f_star_hat: r.f_star_hat,
                    alpha_hat: r.alpha_hat,
                })
                .collect(),
        }
    }
}

/// Parses `std::env::args`, runs the command and returns the exit status.
pub fn main() -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => report(&e),
    }
}

/// Prints the error line and maps the error to an exit status.
pub fn report(e: &Error) -> i32 {
    let (field, code) = match e {
        Error::Config { field, .. } => (Some(field.as_str()), EXIT_CONFIG),
        _ => (None, EXIT_RUNTIME),
    };
    let message = match e {
        Error::Config { message, .. } => message.clone(),
        other => other.to_string(),
    };
    let line = ErrorLine {
        error: e.kind(),
        field,
        message,
    };
    eprintln!("{}", serde_json::to_string(&line).expect("error line serializes"));
    code
}

fn load(common: &CommonArgs, iterations: Option<usize>) -> Result<Config> {
    let mut cfg = match &common.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(n) = iterations {
        cfg.solver.iterations = n;
    }
    Ok(cfg)
}

/// Creates the output directory and writes the effective configuration and
/// version stamp into it.
fn prepare_out(out: &Path, cfg: &Config) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_json(&out.join("config.json"), cfg)?;
    let stamp = out.join("VERSION");
    std::fs::write(&stamp, format!("adavar {}\n", env!("CARGO_PKG_VERSION"))).map_err(|e| Error::io(&stamp, e))
}

pub fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(a) => {
            let cfg = load(&a.common, a.iterations)?;
            cfg.validate()?;
            let solver = cfg.build_solver()?;
            prepare_out(&a.out, &cfg)?;
            let trace = run(solver, RngStream::new(cfg.seed, 0))?;
            for w in &trace.warnings {
                log::warn!("{w}");
            }
            trace.save_csv(&a.out.join("trace.csv"), a.coords)
        }
        Command::Bench(a) => {
            let mut cfg = load(&a.common, a.iterations)?;
            if let Some(r) = a.runs {
                cfg.experiment.runs = r;
            }
            if let Some(eps) = a.eps {
                cfg.experiment.eps = eps;
            }
            if let Some(j) = a.jobs {
                cfg.experiment.jobs = Some(j);
            }
            cfg.validate()?;
            let exp = cfg.experiment_config()?;
            prepare_out(&a.out, &cfg)?;
            let result = convergence_experiment(&exp)?;
            write_curves(&a.out, &result)?;
            if let Some(p) = result.current.final_success() {
                log::info!("final success fraction (current iterate): {p:.4}");
            }
            Ok(())
        }
        Command::EstimateLevelset(a) => {
            let cfg = estimation_config(&a)?;
            prepare_out(&a.out, &cfg)?;
            let cdf = sample_cdf(&cfg)?;
            let path = a.out.join("levelset.csv");
            let mut w = csv::Writer::from_path(&path).map_err(|source| Error::Csv {
                path: path.clone(),
                source,
            })?;
            for &level in &cfg.estimation.levels {
                w.serialize(LevelRow {
                    level,
                    f_hat: cdf.inverse(level)?,
                    samples_used: cdf.len(),
                    provenance: cdf.provenance().as_str(),
                })
                .map_err(|source| Error::Csv {
                    path: path.clone(),
                    source,
                })?;
            }
            w.flush().map_err(|e| Error::io(&path, e))
        }
        Command::EstimateCurvature(a) => {
            let cfg = estimation_config(&a)?;
            prepare_out(&a.out, &cfg)?;
            let points = sample_points(&cfg)?;
            let obj = cfg.objective()?;
            let e = &cfg.estimation;
            let path = a.out.join("curvature.json");
            match estimate_b1b2_iterative(obj.as_ref(), points, &cfg.level_rule()?, e.m, e.rounds, e.eta) {
                Ok(rounds) => write_json(&path, &CurvatureReport::from(rounds.as_slice())),
                Err(Error::PartialRounds { round, completed }) => {
                    write_json(&path, &CurvatureReport::from(completed.as_slice()))?;
                    Err(Error::PartialRounds { round, completed })
                }
                Err(other) => Err(other),
            }
        }
        Command::Occupancy(a) => {
            let mut cfg = load(&a.common, a.iterations)?;
            if let Some(b) = a.bins {
                cfg.experiment.bins = b;
            }
            cfg.validate()?;
            let solver = cfg.build_solver()?;
            if solver.dim() != 1 {
                return Err(Error::config("objective.dim", "occupancy needs a one-dimensional chain"));
            }
            prepare_out(&a.out, &cfg)?;
            let hist = occupation_run(solver, RngStream::new(cfg.seed, 0), cfg.experiment.bins)?;
            let path = a.out.join("occupancy.csv");
            let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            hist.write_csv(std::io::BufWriter::new(file))
        }
        Command::Gradcheck(a) => {
            let cfg = load(&a, None)?;
            let obj = cfg.objective()?;
            let domain = cfg.domain()?;
            let mut rng = RngStream::new(cfg.seed, AUX_STREAM);
            let points: Vec<Point> = (0..GRADCHECK_POINTS).map(|_| uniform_in_box(&mut rng, &domain)).collect();
            let err = max_gradient_error(obj.as_ref(), &points, GRADCHECK_STEP)?;
            println!(
                "{}",
                serde_json::json!({ "points": GRADCHECK_POINTS, "max_relative_error": err, "tolerance": GRADCHECK_TOL })
            );
            if err < GRADCHECK_TOL {
                Ok(())
            } else {
                Err(Error::invalid(format!(
                    "gradient check failed: max relative error {err:.3e} >= {GRADCHECK_TOL:e}"
                )))
            }
        }
    }
}

fn estimation_config(a: &EstimateArgs) -> Result<Config> {
    let mut cfg = load(&a.common, a.iterations)?;
    if let Some(s) = a.samples {
        cfg.estimation.samples = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_curves(out: &Path, result: &ExperimentResult) -> Result<()> {
    for (name, curve) in [("curve_current.csv", &result.current), ("curve_best.csv", &result.best)] {
        let path = out.join(name);
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        curve.write_csv(std::io::BufWriter::new(file))?;
    }
    Ok(())
}

/// Solver runs on successive streams, for the online sample source. Only
/// variants with a high-noise regime produce usable iterates.
fn online_traces(cfg: &Config, mut enough: impl FnMut(&crate::solver::RunTrace) -> bool) -> Result<()> {
    let solver = cfg.build_solver()?;
    if !matches!(solver.variant, Variant::TwoStage | Variant::GradientFree { .. }) {
        return Err(Error::config(
            "solver.variant",
            "online estimation needs a variant with a high-noise regime",
        ));
    }
    for k in 0.. {
        let trace = run(solver.clone(), derive_stream(cfg.seed, k))?;
        if high_variance_values(&trace).next().is_none() {
            return Err(Error::EmptyEstimate("a run produced no high-variance iterates".into()));
        }
        if enough(&trace) {
            break;
        }
    }
    Ok(())
}

fn sample_cdf(cfg: &Config) -> Result<EmpiricalCdf> {
    let target = cfg.estimation.samples;
    match cfg.estimation.source {
        SampleSource::Iid => {
            let mut rng = RngStream::new(cfg.seed, AUX_STREAM);
            build_cdf_iid(cfg.objective()?.as_ref(), &cfg.domain()?, target, &mut rng)
        }
        SampleSource::Online => {
            let mut values = Vec::with_capacity(target);
            online_traces(cfg, |t| {
                values.extend(high_variance_values(t));
                values.len() >= target
            })?;
            EmpiricalCdf::from_values(values, Provenance::HighVarianceIterates)
        }
    }
}

/// Points for the curvature estimator: at most `estimation.samples` of them.
fn sample_points(cfg: &Config) -> Result<Vec<Point>> {
    let target = cfg.estimation.samples;
    match cfg.estimation.source {
        SampleSource::Iid => {
            let domain = cfg.domain()?;
            let mut rng = RngStream::new(cfg.seed, AUX_STREAM);
            Ok((0..target).map(|_| uniform_in_box(&mut rng, &domain)).collect())
        }
        SampleSource::Online => {
            let mut points = Vec::with_capacity(target);
            online_traces(cfg, |t| {
                points.extend(
                    t.records
                        .iter()
                        .filter(|r| r.regime.is_high_variance())
                        .map(|r| r.position.clone())
                        .take(target - points.len()),
                );
                points.len() >= target
            })?;
            Ok(points)
        }
    }
}
