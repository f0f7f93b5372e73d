//! Multi-run experiments: convergence-probability curves over independent
//! seeded runs, occupation histograms for the gradient-free chain, and CSV
//! export of both.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::{distance, Point};
use crate::sampler::{derive_stream, RngStream};
use crate::solver::{RunTrace, Solver, SolverConfig};

/// Two-sided 95% normal quantile.
pub const WILSON_Z: f64 = 1.959964;

/// Wilson score interval for `successes` out of `trials` at the given `z`.
pub fn wilson_interval(successes: usize, trials: usize, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let k = trials as f64;
    let p = successes as f64 / k;
    let z2 = z * z;
    let denom = 1.0 + z2 / k;
    let center = (p + z2 / (2.0 * k)) / denom;
    let half = z / denom * (p * (1.0 - p) / k + z2 / (4.0 * k * k)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// `{1, 2, 5} x 10^j` up to `n_max`, with `n_max` itself appended.
pub fn default_checkpoints(n_max: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut scale = 1usize;
    'outer: loop {
        for m in [1, 2, 5] {
            let c = m * scale;
            if c > n_max {
                break 'outer;
            }
            out.push(c);
        }
        scale = match scale.checked_mul(10) {
            Some(s) => s,
            None => break,
        };
    }
    if out.last() != Some(&n_max) {
        out.push(n_max);
    }
    out
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    /// Template for every run; runs differ only in their random stream.
    pub solver: SolverConfig,
    pub runs: usize,
    pub eps: f64,
    /// Sorted iteration indices at which success is recorded.
    pub checkpoints: Vec<usize>,
    pub master_seed: u64,
    /// Worker threads; `None` uses rayon's default.
    pub jobs: Option<usize>,
    /// Keep the full trace of every run (memory grows with runs x iterations).
    pub keep_traces: bool,
}

impl ExperimentConfig {
    pub fn new(solver: SolverConfig, runs: usize, eps: f64, master_seed: u64) -> Self {
        let checkpoints = default_checkpoints(solver.iterations);
        ExperimentConfig {
            solver,
            runs,
            eps,
            checkpoints,
            master_seed,
            jobs: None,
            keep_traces: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        if self.runs < 1 {
            return Err(Error::config("experiment.runs", "must be at least 1"));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::config("experiment.eps", format!("must be positive, got {}", self.eps)));
        }
        if self.checkpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("experiment.checkpoints", "must be strictly increasing"));
        }
        if self.checkpoints.last().is_some_and(|&c| c > self.solver.iterations) {
            return Err(Error::config(
                "experiment.checkpoints",
                "checkpoints may not exceed the iteration count",
            ));
        }
        if self.jobs == Some(0) {
            return Err(Error::config("experiment.jobs", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub checkpoint: usize,
    pub failure_fraction: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
}

/// Estimated `P(|X_n - x*| >= eps)` at each checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceCurve {
    pub runs: usize,
    pub points: Vec<CurvePoint>,
}

impl ConvergenceCurve {
    /// Builds the curve from per-checkpoint failure counts.
    pub fn from_failures(checkpoints: &[usize], failures: &[usize], runs: usize) -> Self {
        let points = checkpoints
            .iter()
            .zip(failures)
            .map(|(&checkpoint, &fail)| {
                let (wilson_lo, wilson_hi) = wilson_interval(fail, runs, WILSON_Z);
                CurvePoint {
                    checkpoint,
                    failure_fraction: fail as f64 / runs as f64,
                    wilson_lo,
                    wilson_hi,
                }
            })
            .collect();
        ConvergenceCurve { runs, points }
    }

    /// Success fraction `1 - failure` at the last checkpoint.
    pub fn final_success(&self) -> Option<f64> {
        self.points.last().map(|p| 1.0 - p.failure_fraction)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let wrap = |source| Error::Csv {
            path: "<curve>".into(),
            source,
        };
        // The header is written by hand so an empty curve still gets one.
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        w.write_record(["checkpoint", "failure_fraction", "wilson_lo", "wilson_hi"])
            .map_err(wrap)?;
        for p in &self.points {
            w.serialize(p).map_err(wrap)?;
        }
        w.flush().map_err(|e| Error::io("<curve>", e))?;
        Ok(())
    }

    /// Reads a curve written by [`ConvergenceCurve::write_csv`]; the run count
    /// is not part of the CSV and comes from the sidecar.
    pub fn read_csv<R: Read>(input: R, runs: usize) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let points = r
            .deserialize()
            .collect::<std::result::Result<Vec<CurvePoint>, _>>()
            .map_err(|source| Error::Csv {
                path: "<curve>".into(),
                source,
            })?;
        Ok(ConvergenceCurve { runs, points })
    }
}

/// Summary of one run inside an experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub run: usize,
    /// Whether the current iterate was at least `eps` from `x*`, per checkpoint.
    pub current_failed: Vec<bool>,
    /// The same for the best-so-far iterate.
    pub best_failed: Vec<bool>,
    pub final_f: f64,
    pub best_f: f64,
    pub trace: Option<RunTrace>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentResult {
    pub current: ConvergenceCurve,
    pub best: ConvergenceCurve,
    pub outcomes: Vec<RunOutcome>,
}

fn run_one(cfg: &ExperimentConfig, run: usize, target: &Point) -> Result<RunOutcome> {
    let mut solver = Solver::new(cfg.solver.clone(), derive_stream(cfg.master_seed, run as u64))?;
    let mut current_failed = Vec::with_capacity(cfg.checkpoints.len());
    let mut best_failed = Vec::with_capacity(cfg.checkpoints.len());
    let mut records = cfg.keep_traces.then(|| vec![solver.current().clone()]);
    let mut next = cfg.checkpoints.iter().peekable();
    let mut check = |solver: &Solver, failed_c: &mut Vec<bool>, failed_b: &mut Vec<bool>| {
        let n = solver.current().n;
        while next.peek() == Some(&&n) {
            failed_c.push(distance(&solver.current().position, target) >= cfg.eps);
            failed_b.push(distance(&solver.best().position, target) >= cfg.eps);
            next.next();
        }
    };
    check(&solver, &mut current_failed, &mut best_failed);
    for _ in 0..cfg.solver.iterations {
        if let Err(e) = solver.step() {
            let partial = RunTrace {
                records: records.unwrap_or_else(|| vec![solver.current().clone()]),
                best: solver.best().clone(),
                seed: cfg.master_seed,
                stream: run as u64,
                warnings: solver.warnings().to_vec(),
            };
            return Err(Error::Step {
                step: solver.current().n + 1,
                message: format!("run {run}: {e}"),
                partial: Box::new(partial),
            });
        }
        if let Some(r) = records.as_mut() {
            r.push(solver.current().clone());
        }
        check(&solver, &mut current_failed, &mut best_failed);
    }
    let trace = records.map(|records| RunTrace {
        records,
        best: solver.best().clone(),
        seed: cfg.master_seed,
        stream: run as u64,
        warnings: solver.warnings().to_vec(),
    });
    Ok(RunOutcome {
        run,
        current_failed,
        best_failed,
        final_f: solver.current().f_value,
        best_f: solver.best().f_value,
        trace,
    })
}

/// Runs `cfg.runs` independent trajectories, run `k` on stream `k` of the
/// master seed, and aggregates the failure fractions in run order. The result
/// does not depend on `cfg.jobs`.
pub fn convergence_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let target = cfg.solver.objective.minimizer().ok_or_else(|| {
        Error::invalid("convergence experiments need an objective with a known minimizer")
    })?;
    let work = || -> Result<Vec<RunOutcome>> {
        (0..cfg.runs)
            .into_par_iter()
            .map(|k| run_one(cfg, k, &target))
            .collect()
    };
    let outcomes = match cfg.jobs {
        Some(jobs) => rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::invalid(format!("cannot build worker pool: {e}")))?
            .install(work)?,
        None => work()?,
    };
    let m = cfg.checkpoints.len();
    let (mut fail_c, mut fail_b) = (vec![0usize; m], vec![0usize; m]);
    for o in &outcomes {
        for i in 0..m {
            fail_c[i] += o.current_failed[i] as usize;
            fail_b[i] += o.best_failed[i] as usize;
        }
    }
    Ok(ExperimentResult {
        current: ConvergenceCurve::from_failures(&cfg.checkpoints, &fail_c, cfg.runs),
        best: ConvergenceCurve::from_failures(&cfg.checkpoints, &fail_b, cfg.runs),
        outcomes,
    })
}

/// Fraction of time a one-dimensional chain spends in each of `bins`
/// equal-width bins over `[low, high]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupationHistogram {
    pub low: f64,
    pub high: f64,
    pub counts: Vec<u64>,
}

impl OccupationHistogram {
    pub fn new(low: f64, high: f64, bins: usize) -> Result<Self> {
        if bins < 1 {
            return Err(Error::invalid("need at least one bin"));
        }
        if !(low < high && low.is_finite() && high.is_finite()) {
            return Err(Error::invalid(format!("bad histogram range [{low}, {high}]")));
        }
        Ok(OccupationHistogram {
            low,
            high,
            counts: vec![0; bins],
        })
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn edges(&self, bin: usize) -> (f64, f64) {
        let w = (self.high - self.low) / self.bins() as f64;
        let lo = self.low + bin as f64 * w;
        let hi = if bin + 1 == self.bins() { self.high } else { self.low + (bin + 1) as f64 * w };
        (lo, hi)
    }

    /// Adds one visit; values outside the range land in the end bins.
    pub fn add(&mut self, x: f64) {
        let b = self.bins();
        let t = (x - self.low) / (self.high - self.low) * b as f64;
        let idx = if t <= 0.0 { 0 } else { (t as usize).min(b - 1) };
        self.counts[idx] += 1;
    }

    pub fn masses(&self) -> Vec<f64> {
        let total = self.total();
        if total == 0 {
            return vec![0.0; self.bins()];
        }
        self.counts.iter().map(|&c| c as f64 / total as f64).collect()
    }

    /// Mass of the bins whose centers lie in `[a, b]`.
    pub fn mass_between(&self, a: f64, b: f64) -> f64 {
        self.masses()
            .iter()
            .enumerate()
            .filter(|(i, _)| {
                let (lo, hi) = self.edges(*i);
                let c = 0.5 * (lo + hi);
                (a..=b).contains(&c)
            })
            .map(|(_, m)| m)
            .sum()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let wrap = |source| Error::Csv {
            path: "<histogram>".into(),
            source,
        };
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bin_lo", "bin_hi", "mass"]).map_err(wrap)?;
        for (i, m) in self.masses().into_iter().enumerate() {
            let (lo, hi) = self.edges(i);
            w.write_record([lo.to_string(), hi.to_string(), m.to_string()])
                .map_err(wrap)?;
        }
        w.flush().map_err(|e| Error::io("<histogram>", e))?;
        Ok(())
    }
}

fn check_one_dimensional(d: usize) -> Result<()> {
    if d != 1 {
        return Err(Error::invalid(format!(
            "occupation histograms are one-dimensional, got dimension {d}"
        )));
    }
    Ok(())
}

/// Histogram of `X_1, ..., X_N` of a stored one-dimensional trace over the
/// range `[low, high]`.
pub fn occupation_measure(trace: &RunTrace, low: f64, high: f64, bins: usize) -> Result<OccupationHistogram> {
    let mut h = OccupationHistogram::new(low, high, bins)?;
    if let Some(first) = trace.records.first() {
        check_one_dimensional(first.position.dim())?;
    }
    for r in trace.records.iter().skip(1) {
        h.add(r.position[0]);
    }
    Ok(h)
}

/// Runs a one-dimensional chain and bins `X_1, ..., X_N` over its box without
/// storing the trace.
pub fn occupation_run(config: SolverConfig, rng: RngStream, bins: usize) -> Result<OccupationHistogram> {
    check_one_dimensional(config.dim())?;
    let (low, high) = (config.domain.low()[0], config.domain.high()[0]);
    let mut h = OccupationHistogram::new(low, high, bins)?;
    let iterations = config.iterations;
    let mut solver = Solver::new(config, rng)?;
    for _ in 0..iterations {
        h.add(solver.step()?.position[0]);
    }
    Ok(h)
}

/// Writes `value` as pretty JSON to `path`.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Result payload accepted by [`export_results`].
pub enum Exportable<'a> {
    Curve(&'a ConvergenceCurve),
    Histogram(&'a OccupationHistogram),
}

/// Writes the CSV at `path` and, when given, a JSON sidecar next to it with
/// the same stem.
pub fn export_results<T: Serialize>(result: Exportable<'_>, path: &Path, sidecar: Option<&T>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let out = std::io::BufWriter::new(file);
    let with_path = |e: Error| match e {
        Error::Csv { source, .. } => Error::Csv {
            path: path.to_path_buf(),
            source,
        },
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    };
    match result {
        Exportable::Curve(c) => c.write_csv(out).map_err(with_path)?,
        Exportable::Histogram(h) => h.write_csv(out).map_err(with_path)?,
    }
    if let Some(meta) = sidecar {
        write_json(&path.with_extension("json"), meta)?;
    }
    Ok(())
}

pub fn import_curve(path: &Path, runs: usize) -> Result<ConvergenceCurve> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ConvergenceCurve::read_csv(std::io::BufReader::new(file), runs).map_err(|e| match e {
        Error::Csv { source, .. } => Error::Csv {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{BoxDomain, ObjectiveHandle, Rastrigin, RastriginParams};
    use crate::schedule::{PracticalSchedule, Schedule};
    use crate::solver::{read_trace_csv, InitialPoint, Variant};
    use std::sync::Arc;

    fn two_stage(c: f64, iterations: usize) -> SolverConfig {
        let obj: ObjectiveHandle = Arc::new(Rastrigin::new(RastriginParams::new(1.0, 1.0, c, 2).unwrap()).unwrap());
        SolverConfig::new(
            Variant::TwoStage,
            obj,
            BoxDomain::cube(2, -20.0, 20.0).unwrap(),
            Schedule::Practical(PracticalSchedule::new(1.0, 20.0, 1.0, 0.5, 1.0).unwrap()),
            iterations,
        )
    }

    #[test]
    fn checkpoint_grid() {
        assert_eq!(default_checkpoints(5000), vec![1, 2, 5, 10, 20, 50, 100, 200, 500, 1000, 2000, 5000]);
        assert_eq!(default_checkpoints(30), vec![1, 2, 5, 10, 20, 30]);
        assert_eq!(default_checkpoints(1), vec![1]);
    }

    #[test]
    fn wilson_examples() {
        let (lo, hi) = wilson_interval(0, 100, WILSON_Z);
        assert_eq!(lo, 0.0);
        assert!((hi - 0.036995).abs() < 1e-5, "{hi}");
        let (lo, hi) = wilson_interval(50, 100, WILSON_Z);
        assert!((lo - 0.403832).abs() < 1e-5 && (hi - 0.596168).abs() < 1e-5, "{lo} {hi}");
    }

    #[test]
    fn wilson_width_shrinks_like_inverse_sqrt() {
        let width = |k: usize| {
            let (lo, hi) = wilson_interval(k * 3 / 10, k, WILSON_Z);
            hi - lo
        };
        let (w25, w100, w400) = (width(25), width(100), width(400));
        assert!((w25 / w100 - 2.0).abs() < 0.2, "{}", w25 / w100);
        assert!((w100 / w400 - 2.0).abs() < 0.1, "{}", w100 / w400);
    }

    #[test]
    fn run_started_at_minimizer_never_fails() {
        let obj: ObjectiveHandle = Arc::new(crate::objective::Quadratic::diagonal(vec![1.0, 1.0]).unwrap());
        let sched = Schedule::Classical(
            crate::schedule::ClassicalSchedule::new(0.0, crate::schedule::ClassicalDecay::InverseSqrtN, 0.5).unwrap(),
        );
        let solver = SolverConfig::new(Variant::Classical, obj, BoxDomain::cube(2, -1.0, 1.0).unwrap(), sched, 100)
            .with_initial(InitialPoint::Explicit(Point::zeros(2)));
        let cfg = ExperimentConfig::new(solver, 1, 1e-9, 0);
        let res = convergence_experiment(&cfg).unwrap();
        assert!(res.current.points.iter().all(|p| p.failure_fraction == 0.0));
        assert!(res.best.points.iter().all(|p| p.failure_fraction == 0.0));
    }

    #[test]
    fn unknown_minimizer_is_rejected() {
        let solver = SolverConfig::gradient_free(
            BoxDomain::cube(1, 0.0, 4.0).unwrap(),
            BoxDomain::cube(1, 1.5, 2.5).unwrap(),
            0.4,
            10,
        );
        let cfg = ExperimentConfig::new(solver, 2, 0.1, 0);
        assert!(matches!(convergence_experiment(&cfg), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let mut cfg = ExperimentConfig::new(two_stage(0.05, 400), 12, 0.01, 99);
        cfg.jobs = Some(1);
        let serial = convergence_experiment(&cfg).unwrap();
        cfg.jobs = Some(4);
        let parallel = convergence_experiment(&cfg).unwrap();
        assert_eq!(serial, parallel);
        let mut a = Vec::new();
        let mut b = Vec::new();
        serial.current.write_csv(&mut a).unwrap();
        parallel.current.write_csv(&mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn curve_fractions_match_recomputation_from_trace_csvs() {
        let mut cfg = ExperimentConfig::new(two_stage(0.05, 300), 8, 0.5, 5);
        cfg.keep_traces = true;
        let res = convergence_experiment(&cfg).unwrap();
        let mut fail_c = vec![0usize; cfg.checkpoints.len()];
        let mut fail_b = vec![0usize; cfg.checkpoints.len()];
        for o in &res.outcomes {
            let mut buf = Vec::new();
            o.trace.as_ref().unwrap().write_csv(&mut buf, true).unwrap();
            let rows = read_trace_csv(buf.as_slice()).unwrap();
            for (i, &c) in cfg.checkpoints.iter().enumerate() {
                let row = &rows[c];
                if row.coords.iter().map(|v| v * v).sum::<f64>().sqrt() >= cfg.eps {
                    fail_c[i] += 1;
                }
                let best = rows[..=c]
                    .iter()
                    .fold(&rows[0], |b, r| if r.f_value < b.f_value { r } else { b });
                assert_eq!(best.f_value, row.best_f);
                if best.coords.iter().map(|v| v * v).sum::<f64>().sqrt() >= cfg.eps {
                    fail_b[i] += 1;
                }
            }
        }
        assert_eq!(res.current, ConvergenceCurve::from_failures(&cfg.checkpoints, &fail_c, cfg.runs));
        assert_eq!(res.best, ConvergenceCurve::from_failures(&cfg.checkpoints, &fail_b, cfg.runs));
    }

    #[test]
    fn curve_roundtrip_and_empty_export() {
        let dir = tempfile::tempdir().unwrap();
        let curve = ConvergenceCurve::from_failures(&[1, 10, 100], &[7, 3, 1], 9);
        let path = dir.path().join("curve.csv");
        export_results(Exportable::Curve(&curve), &path, Some(&serde_json::json!({"seed": 3, "runs": 9}))).unwrap();
        assert_eq!(import_curve(&path, 9).unwrap(), curve);
        let sidecar: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("curve.json")).unwrap()).unwrap();
        assert_eq!(sidecar["seed"], 3);

        let empty = ConvergenceCurve::from_failures(&[], &[], 4);
        let mut buf = Vec::new();
        empty.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "checkpoint,failure_fraction,wilson_lo,wilson_hi\n");
    }

    #[test]
    fn histogram_basics() {
        let mut h = OccupationHistogram::new(0.0, 4.0, 8).unwrap();
        for _ in 0..10 {
            h.add(1.1);
        }
        let m = h.masses();
        assert_eq!(m[2], 1.0);
        assert_eq!(m.iter().sum::<f64>(), 1.0);
        h.add(4.0);
        h.add(-1.0);
        assert_eq!(h.counts[7], 1);
        assert_eq!(h.counts[0], 1);
        assert_eq!(h.edges(7), (3.5, 4.0));
        assert!(OccupationHistogram::new(0.0, 1.0, 0).is_err());
    }

    #[test]
    fn occupation_excludes_initial_point() {
        let solver = SolverConfig::gradient_free(
            BoxDomain::cube(1, 0.0, 4.0).unwrap(),
            BoxDomain::cube(1, 1.5, 2.5).unwrap(),
            0.4,
            1000,
        );
        let trace = crate::solver::run(solver.clone(), RngStream::new(1, 0)).unwrap();
        let h = occupation_measure(&trace, 0.0, 4.0, 40).unwrap();
        assert_eq!(h.total(), 1000);
        let streamed = occupation_run(solver, RngStream::new(1, 0), 40).unwrap();
        assert_eq!(h, streamed);
        assert!((h.masses().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
