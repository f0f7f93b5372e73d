//! Single-trajectory driver for every algorithm variant.
//!
//! A [`Solver`] owns its random stream and advances one iterate per
//! [`Solver::step`]. [`run`] drives it for the configured number of steps and
//! collects a [`RunTrace`].
//!
//! Record `n` holds `X_n` and its observed objective value. Its `sigma_used`,
//! `cutoff` and `regime` describe the step `X_{n-1} -> X_n` that produced it,
//! so `regime` reflects how the predecessor compared against the cutoff.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::{BoxDomain, Flat, ObjectiveHandle, Point, StochasticHandle};
use crate::sampler::RngStream;
use crate::schedule::{CutoffSource, CutoffTracker, Schedule};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchRule {
    /// `ceil(ln(10 n))`.
    Classical,
    /// `n`.
    Proposed,
    /// `ceil(scale * n^exponent)`.
    Power { scale: f64, exponent: f64 },
}

impl BatchRule {
    /// Batch size before clamping; `n` is floored at 1.
    pub fn raw_size(&self, n: usize) -> f64 {
        let n = n.max(1) as f64;
        match self {
            BatchRule::Classical => (10.0 * n).ln().ceil(),
            BatchRule::Proposed => n,
            BatchRule::Power { scale, exponent } => (scale * n.powf(*exponent)).ceil(),
        }
    }

    /// Batch size at step `n`, and whether it had to be raised to 1.
    pub fn size(&self, n: usize) -> (usize, bool) {
        let raw = self.raw_size(n);
        if raw >= 1.0 {
            (raw as usize, false)
        } else {
            (1, true)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum Variant {
    /// Gradient step with low noise inside the sublevel set, uniform resample
    /// outside it.
    Restart,
    /// Gradient step with low or high noise depending on the sublevel test.
    TwoStage,
    /// Gradient step with state-independent noise.
    Classical,
    /// Restart form driven by batch-averaged samples of a stochastic objective.
    Batch { batch_rule: BatchRule },
    /// Pure diffusion on a periodic box: noise `scale` inside `region`,
    /// `1/scale` outside.
    GradientFree { region: BoxDomain, scale: f64 },
}

impl Variant {
    pub fn tag(&self) -> &'static str {
        match self {
            Variant::Restart => "restart",
            Variant::TwoStage => "two_stage",
            Variant::Classical => "classical",
            Variant::Batch { .. } => "batch",
            Variant::GradientFree { .. } => "gradient_free",
        }
    }
}

/// What happens to a Gaussian step that leaves the box.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryPolicy {
    /// Mirror each coordinate back into its interval.
    #[default]
    Reflect,
    Clamp,
    /// Redraw the whole point uniformly from the box.
    Resample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialPoint {
    Uniform,
    Explicit(Point),
}

#[derive(Clone)]
pub struct SolverConfig {
    pub variant: Variant,
    pub objective: ObjectiveHandle,
    /// Required by the batch variant.
    pub stochastic: Option<StochasticHandle>,
    pub domain: BoxDomain,
    pub schedule: Schedule,
    pub iterations: usize,
    pub initial: InitialPoint,
    pub boundary: BoundaryPolicy,
}

impl fmt::Debug for SolverConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SolverConfig")
            .field("variant", &self.variant)
            .field("dim", &self.objective.dim())
            .field("stochastic", &self.stochastic.is_some())
            .field("domain", &self.domain)
            .field("schedule", &self.schedule)
            .field("iterations", &self.iterations)
            .field("initial", &self.initial)
            .field("boundary", &self.boundary)
            .finish()
    }
}

impl SolverConfig {
    pub fn new(
        variant: Variant,
        objective: ObjectiveHandle,
        domain: BoxDomain,
        schedule: Schedule,
        iterations: usize,
    ) -> Self {
        SolverConfig {
            variant,
            objective,
            stochastic: None,
            domain,
            schedule,
            iterations,
            initial: InitialPoint::Uniform,
            boundary: BoundaryPolicy::Reflect,
        }
    }

    /// Gradient-free chain on `domain` with no objective attached.
    pub fn gradient_free(domain: BoxDomain, region: BoxDomain, scale: f64, iterations: usize) -> Self {
        let objective: ObjectiveHandle = Arc::new(Flat { dim: domain.dim() });
        let schedule = Schedule::Classical(crate::schedule::ClassicalSchedule {
            sigma0: 0.0,
            decay: crate::schedule::ClassicalDecay::InverseSqrtN,
            eta: 1.0,
        });
        SolverConfig::new(
            Variant::GradientFree { region, scale },
            objective,
            domain,
            schedule,
            iterations,
        )
    }

    pub fn with_initial(mut self, initial: InitialPoint) -> Self {
        self.initial = initial;
        self
    }

    pub fn with_boundary(mut self, boundary: BoundaryPolicy) -> Self {
        self.boundary = boundary;
        self
    }

    pub fn with_stochastic(mut self, stochastic: StochasticHandle) -> Self {
        self.stochastic = Some(stochastic);
        self
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::config("iterations", "must be at least 1"));
        }
        if self.objective.dim() != self.domain.dim() {
            return Err(Error::config(
                "objective.dim",
                format!(
                    "objective dimension {} does not match box dimension {}",
                    self.objective.dim(),
                    self.domain.dim()
                ),
            ));
        }
        if let InitialPoint::Explicit(p) = &self.initial {
            if !self.domain.contains(p) {
                return Err(Error::config("initial", "initial point lies outside the box"));
            }
        }
        match &self.variant {
            Variant::TwoStage if self.schedule.sigma_high().is_none() => {
                return Err(Error::config(
                    "schedule.sigma_high",
                    "the two-stage variant needs a high noise level",
                ));
            }
            Variant::Batch { .. } => match &self.stochastic {
                None => {
                    return Err(Error::config(
                        "objective.name",
                        "the batch variant needs a stochastic objective",
                    ))
                }
                Some(s) if s.dim() != self.domain.dim() => {
                    return Err(Error::config("objective.dim", "stochastic objective dimension mismatch"))
                }
                _ => {}
            },
            Variant::GradientFree { region, scale } => {
                if !(*scale > 0.0 && scale.is_finite()) {
                    return Err(Error::config("solver.scale", format!("scale must be positive, got {scale}")));
                }
                if region.dim() != self.domain.dim() {
                    return Err(Error::config("solver.region", "region dimension does not match the box"));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// The starting point; no step produced it.
    Initial,
    Low,
    High,
    /// Uniform resample from the box.
    Restart,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Initial => "initial",
            Regime::Low => "low",
            Regime::High => "high",
            Regime::Restart => "restart",
        }
    }

    /// Produced from a predecessor outside the low-noise region.
    pub fn is_high_variance(self) -> bool {
        matches!(self, Regime::High | Regime::Restart)
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "initial" => Ok(Regime::Initial),
            "low" => Ok(Regime::Low),
            "high" => Ok(Regime::High),
            "restart" => Ok(Regime::Restart),
            other => Err(Error::invalid(format!("unknown regime `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterateRecord {
    pub n: usize,
    pub position: Point,
    /// Objective at `position`; the batch mean for the batch variant.
    pub f_value: f64,
    /// Noise level of the producing step. Infinite for a uniform resample,
    /// zero for a batch gradient step, and zero for the initial record.
    pub sigma_used: f64,
    /// Cutoff active at the producing step. Infinite when the schedule has
    /// none, NaN where it does not apply.
    pub cutoff: f64,
    pub regime: Regime,
    /// Batch size used to evaluate `f_value` (batch variant only).
    pub batch_size: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub records: Vec<IterateRecord>,
    /// First record attaining the minimum `f_value`.
    pub best: IterateRecord,
    pub seed: u64,
    pub stream: u64,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl RunTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Running minimum of `f_value`.
    pub fn best_values(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.records
            .iter()
            .map(|r| {
                best = best.min(r.f_value);
                best
            })
            .collect()
    }

    /// Best-so-far record at iteration `n` (inclusive).
    pub fn best_until(&self, n: usize) -> Option<&IterateRecord> {
        let end = (n + 1).min(self.records.len());
        let mut best: Option<&IterateRecord> = None;
        for r in &self.records[..end] {
            if best.is_none_or(|b| r.f_value < b.f_value) {
                best = Some(r);
            }
        }
        best
    }

    /// Writes the trace as CSV: `n, f_value, cutoff, sigma_used, regime,
    /// best_f` and, when `coords` is set, `x0 .. x{d-1}`.
    pub fn write_csv<W: Write>(&self, out: W, coords: bool) -> Result<()> {
        write_trace_csv(self, out, coords).map_err(|source| Error::Csv {
            path: "<trace>".into(),
            source,
        })
    }

    pub fn save_csv(&self, path: &Path, coords: bool) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        write_trace_csv(self, std::io::BufWriter::new(file), coords).map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })
    }
}

fn write_trace_csv<W: Write>(trace: &RunTrace, out: W, coords: bool) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let d = trace.records.first().map_or(0, |r| r.position.dim());
    let mut header: Vec<String> = ["n", "f_value", "cutoff", "sigma_used", "regime", "best_f"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    if coords {
        header.extend((0..d).map(|i| format!("x{i}")));
    }
    w.write_record(&header)?;
    let mut best = f64::INFINITY;
    for r in &trace.records {
        best = best.min(r.f_value);
        let mut row = vec![
            r.n.to_string(),
            r.f_value.to_string(),
            r.cutoff.to_string(),
            r.sigma_used.to_string(),
            r.regime.as_str().to_string(),
            best.to_string(),
        ];
        if coords {
            row.extend(r.position.iter().map(|v| v.to_string()));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// One parsed row of a trace CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub n: usize,
    pub f_value: f64,
    pub cutoff: f64,
    pub sigma_used: f64,
    pub regime: Regime,
    pub best_f: f64,
    pub coords: Vec<f64>,
}

pub fn read_trace_csv<R: Read>(input: R) -> Result<Vec<TraceRow>> {
    let wrap = |source| Error::Csv {
        path: "<trace>".into(),
        source,
    };
    let mut r = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(wrap)?;
        let num = |i: usize| -> Result<f64> {
            let field = rec.get(i).unwrap_or("");
            field
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("bad number `{field}` in column {i}")))
        };
        rows.push(TraceRow {
            n: rec
                .get(0)
                .unwrap_or("")
                .parse()
                .map_err(|_| Error::invalid("bad iteration index"))?,
            f_value: num(1)?,
            cutoff: num(2)?,
            sigma_used: num(3)?,
            regime: rec.get(4).unwrap_or("").parse()?,
            best_f: num(5)?,
            coords: (6..rec.len()).map(num).collect::<Result<_>>()?,
        });
    }
    Ok(rows)
}

/// Folds `y` into `[lo, hi]` by repeated mirroring at the walls.
pub(crate) fn reflect(y: f64, lo: f64, hi: f64) -> f64 {
    let len = hi - lo;
    let t = (y - lo).rem_euclid(2.0 * len);
    let folded = if t > len { 2.0 * len - t } else { t };
    (lo + folded).clamp(lo, hi)
}

/// Periodic wrap of `y` into `[lo, hi)`.
pub(crate) fn wrap(y: f64, lo: f64, hi: f64) -> f64 {
    let len = hi - lo;
    let v = lo + (y - lo).rem_euclid(len);
    // rem_euclid can round up to exactly `len`.
    if v >= hi {
        lo
    } else {
        v
    }
}

/// Steps a single trajectory.
pub struct Solver {
    config: SolverConfig,
    rng: RngStream,
    tracker: Option<CutoffTracker>,
    current: IterateRecord,
    best: IterateRecord,
    grad: Vec<f64>,
    /// Gradient of the current position, when it came with the evaluation.
    grad_ready: bool,
    noise: Vec<f64>,
    next: Vec<f64>,
    warnings: Vec<String>,
}

impl Solver {
    pub fn new(config: SolverConfig, mut rng: RngStream) -> Result<Self> {
        config.validate()?;
        let d = config.dim();
        let tracker = match config.schedule.cutoff_source() {
            CutoffSource::RunningQuantile { quantile, monotone } => {
                Some(CutoffTracker::new(quantile, monotone)?)
            }
            _ => None,
        };
        let x0 = match &config.initial {
            InitialPoint::Explicit(p) => p.clone(),
            InitialPoint::Uniform => crate::sampler::uniform_in_box(&mut rng, &config.domain),
        };
        let placeholder = IterateRecord {
            n: 0,
            position: x0,
            f_value: f64::NAN,
            sigma_used: 0.0,
            cutoff: f64::NAN,
            regime: Regime::Initial,
            batch_size: None,
        };
        let mut solver = Solver {
            config,
            rng,
            tracker,
            best: placeholder.clone(),
            current: placeholder,
            grad: vec![0.0; d],
            grad_ready: false,
            noise: vec![0.0; d],
            next: vec![0.0; d],
            warnings: Vec::new(),
        };
        solver.evaluate_current()?;
        solver.best = solver.current.clone();
        Ok(solver)
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn current(&self) -> &IterateRecord {
        &self.current
    }

    pub fn best(&self) -> &IterateRecord {
        &self.best
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn rng(&self) -> &RngStream {
        &self.rng
    }

    /// Evaluates the objective at the current position, feeds the running
    /// quantile and caches the gradient when it comes for free.
    fn evaluate_current(&mut self) -> Result<()> {
        let n = self.current.n;
        let x = self.current.position.as_slice();
        let value = match &self.config.variant {
            Variant::Batch { batch_rule } => {
                let (m, clamped) = batch_rule.size(n);
                if clamped {
                    let msg = format!("batch size at step {n} clamped to 1");
                    log::warn!("{msg}");
                    self.warnings.push(msg);
                }
                self.current.batch_size = Some(m);
                let stoch = self.config.stochastic.as_ref().expect("validated");
                self.grad_ready = true;
                stoch.batch_into(x, m, &mut self.rng, &mut self.grad)
            }
            _ => {
                self.grad_ready = false;
                self.config.objective.value(x)
            }
        };
        if !value.is_finite() {
            return Err(Error::invalid(format!("objective is not finite ({value}) at step {n}")));
        }
        self.current.f_value = value;
        if let Some(t) = &mut self.tracker {
            t.push(value);
        }
        Ok(())
    }

    fn cutoff(&self, n: usize) -> f64 {
        match self.config.schedule.cutoff_source() {
            CutoffSource::RunningQuantile { .. } => self
                .tracker
                .as_ref()
                .and_then(|t| t.current())
                .expect("quantile tracker is fed at every evaluation"),
            CutoffSource::Table => self.config.schedule.table_cutoff(n),
            CutoffSource::None => f64::INFINITY,
        }
    }

    fn ensure_gradient(&mut self) {
        if !self.grad_ready {
            self.config
                .objective
                .gradient_into(self.current.position.as_slice(), &mut self.grad);
            self.grad_ready = true;
        }
    }

    /// `next = x - eta * grad + sigma * psi`.
    fn gaussian_step(&mut self, eta: f64, sigma: f64) {
        self.ensure_gradient();
        self.rng.fill_gaussian(&mut self.noise);
        let x = self.current.position.as_slice();
        for i in 0..x.len() {
            self.next[i] = x[i] - eta * self.grad[i] + sigma * self.noise[i];
        }
    }

    fn apply_boundary(&mut self) {
        let domain = &self.config.domain;
        if domain.contains(&self.next) {
            return;
        }
        match self.config.boundary {
            BoundaryPolicy::Reflect => {
                for (i, v) in self.next.iter_mut().enumerate() {
                    *v = reflect(*v, domain.low()[i], domain.high()[i]);
                }
            }
            BoundaryPolicy::Clamp => {
                for (i, v) in self.next.iter_mut().enumerate() {
                    *v = v.clamp(domain.low()[i], domain.high()[i]);
                }
            }
            BoundaryPolicy::Resample => {
                self.rng.fill_uniform_in_box(domain, &mut self.next);
            }
        }
    }

    /// Low-noise gradient step inside the sublevel set, uniform resample
    /// outside.
    fn step_restart(&mut self, n: usize, cutoff: f64) -> (f64, Regime) {
        if self.config.schedule.is_low(self.current.f_value, cutoff) {
            let sigma = self.config.schedule.sigma_low(n);
            self.gaussian_step(self.config.schedule.eta(n), sigma);
            (sigma, Regime::Low)
        } else {
            self.rng.fill_uniform_in_box(&self.config.domain, &mut self.next);
            (f64::INFINITY, Regime::Restart)
        }
    }

    fn step_two_stage(&mut self, n: usize, cutoff: f64) -> (f64, Regime) {
        let schedule = &self.config.schedule;
        let (sigma, regime) = if schedule.is_low(self.current.f_value, cutoff) {
            (schedule.sigma_low(n), Regime::Low)
        } else {
            (schedule.sigma_high().expect("validated"), Regime::High)
        };
        self.gaussian_step(schedule.eta(n), sigma);
        self.apply_boundary();
        (sigma, regime)
    }

    fn step_classical(&mut self, n: usize) -> (f64, Regime) {
        let sigma = self.config.schedule.sigma_low(n);
        self.gaussian_step(self.config.schedule.eta(n), sigma);
        self.apply_boundary();
        (sigma, Regime::Low)
    }

    /// Gradient step with the batch gradient when the batch mean is strictly
    /// below the cutoff, uniform resample otherwise.
    fn step_batch(&mut self, n: usize, cutoff: f64) -> (f64, Regime) {
        if self.current.f_value < cutoff {
            let eta = self.config.schedule.eta(n);
            let x = self.current.position.as_slice();
            for i in 0..x.len() {
                self.next[i] = x[i] - eta * self.grad[i];
            }
            (0.0, Regime::Low)
        } else {
            self.rng.fill_uniform_in_box(&self.config.domain, &mut self.next);
            (f64::INFINITY, Regime::Restart)
        }
    }

    fn step_gradient_free(&mut self, region: &BoxDomain, scale: f64) -> (f64, Regime) {
        let x = self.current.position.as_slice();
        let (sigma, regime) = if region.contains(x) {
            (scale, Regime::Low)
        } else {
            (1.0 / scale, Regime::High)
        };
        self.rng.fill_gaussian(&mut self.noise);
        let domain = &self.config.domain;
        for i in 0..x.len() {
            self.next[i] = wrap(x[i] + sigma * self.noise[i], domain.low()[i], domain.high()[i]);
        }
        (sigma, regime)
    }

    /// Advances to `X_{n+1}` and returns its record.
    pub fn step(&mut self) -> Result<&IterateRecord> {
        let n = self.current.n;
        let (sigma, regime, cutoff) = match self.config.variant.clone() {
            Variant::Restart => {
                let c = self.cutoff(n);
                let (s, r) = self.step_restart(n, c);
                (s, r, c)
            }
            Variant::TwoStage => {
                let c = self.cutoff(n);
                let (s, r) = self.step_two_stage(n, c);
                (s, r, c)
            }
            Variant::Classical => {
                let (s, r) = self.step_classical(n);
                (s, r, f64::INFINITY)
            }
            Variant::Batch { .. } => {
                let c = self.cutoff(n);
                let (s, r) = self.step_batch(n, c);
                (s, r, c)
            }
            Variant::GradientFree { region, scale } => {
                let (s, r) = self.step_gradient_free(&region, scale);
                (s, r, f64::NAN)
            }
        };
        if let Some(i) = self.next.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "coordinate {i} became non-finite at step {}",
                n + 1
            )));
        }
        self.current = IterateRecord {
            n: n + 1,
            position: Point::from_raw(self.next.clone()),
            f_value: f64::NAN,
            sigma_used: sigma,
            cutoff,
            regime,
            batch_size: None,
        };
        self.evaluate_current()?;
        if self.current.f_value < self.best.f_value {
            self.best = self.current.clone();
        }
        Ok(&self.current)
    }
}

/// Runs `config.iterations` steps and records every iterate, the initial
/// point included.
pub fn run(config: SolverConfig, rng: RngStream) -> Result<RunTrace> {
    let (seed, stream) = (rng.seed(), rng.stream());
    let iterations = config.iterations;
    let mut solver = Solver::new(config, rng)?;
    let mut records = Vec::with_capacity(iterations + 1);
    records.push(solver.current().clone());
    for _ in 0..iterations {
        match solver.step() {
            Ok(rec) => records.push(rec.clone()),
            Err(e) => {
                let step = solver.current().n + 1;
                let partial = RunTrace {
                    best: solver.best().clone(),
                    records,
                    seed,
                    stream,
                    warnings: solver.warnings().to_vec(),
                };
                return Err(Error::Step {
                    step,
                    message: e.to_string(),
                    partial: Box::new(partial),
                });
            }
        }
    }
    Ok(RunTrace {
        best: solver.best().clone(),
        records,
        seed,
        stream,
        warnings: solver.warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{Objective, Quadratic, Rastrigin, RastriginParams};
    use crate::schedule::{ClassicalDecay, ClassicalSchedule, PracticalSchedule};
    use approx::assert_abs_diff_eq;

    fn classical(sigma0: f64, eta: f64) -> Schedule {
        Schedule::Classical(ClassicalSchedule::new(sigma0, ClassicalDecay::InverseSqrtN, eta).unwrap())
    }

    fn practical() -> Schedule {
        Schedule::Practical(PracticalSchedule::new(1.0, 20.0, 1.0, 0.5, 1.0).unwrap())
    }

    fn rastrigin(c: f64, d: usize) -> ObjectiveHandle {
        Arc::new(Rastrigin::new(RastriginParams::new(1.0, 1.0, c, d).unwrap()).unwrap())
    }

    #[test]
    fn reflect_and_wrap() {
        assert_abs_diff_eq!(wrap(4.2, 0.0, 4.0), 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap(-0.5, 0.0, 4.0), 3.5, epsilon = 1e-12);
        assert_eq!(wrap(2.0, 0.0, 4.0), 2.0);
        assert_abs_diff_eq!(reflect(21.0, -20.0, 20.0), 19.0, epsilon = 1e-12);
        assert_abs_diff_eq!(reflect(-23.0, -20.0, 20.0), -17.0, epsilon = 1e-12);
        // 100 = -20 + 120; 120 mod 80 = 40 -> -20 + 40
        assert_abs_diff_eq!(reflect(100.0, -20.0, 20.0), 20.0, epsilon = 1e-12);
        assert_abs_diff_eq!(reflect(61.0, -20.0, 20.0), -19.0, epsilon = 1e-12);
    }

    #[test]
    fn single_step_trace_has_two_records() {
        let domain = BoxDomain::cube(2, -20.0, 20.0).unwrap();
        let cfg = SolverConfig::new(Variant::TwoStage, rastrigin(0.05, 2), domain, practical(), 1);
        let trace = run(cfg, RngStream::new(1, 0)).unwrap();
        assert_eq!(trace.len(), 2);
        assert_eq!(trace.records[0].regime, Regime::Initial);
        assert_eq!(trace.records[1].n, 1);
    }

    #[test]
    fn zero_gradient_zero_noise_is_fixed_point() {
        let domain = BoxDomain::cube(2, -5.0, 5.0).unwrap();
        let q: ObjectiveHandle = Arc::new(Quadratic::diagonal(vec![1.0, 1.0]).unwrap());
        let cfg = SolverConfig::new(Variant::Restart, q, domain, classical(0.0, 0.5), 5)
            .with_initial(InitialPoint::Explicit(Point::zeros(2)));
        let trace = run(cfg, RngStream::new(2, 0)).unwrap();
        for r in &trace.records {
            assert_eq!(r.position.as_slice(), &[0.0, 0.0]);
        }
    }

    #[test]
    fn unit_step_on_half_square_norm_lands_at_origin() {
        let domain = BoxDomain::cube(3, -5.0, 5.0).unwrap();
        let q: ObjectiveHandle = Arc::new(Quadratic::diagonal(vec![1.0; 3]).unwrap());
        let cfg = SolverConfig::new(Variant::Restart, q, domain, classical(0.0, 1.0), 1)
            .with_initial(InitialPoint::Explicit(Point::new(vec![3.0, -1.0, 4.5]).unwrap()));
        let trace = run(cfg, RngStream::new(2, 0)).unwrap();
        assert_eq!(trace.records[1].position.as_slice(), &[0.0, 0.0, 0.0]);
        assert_eq!(trace.records[1].regime, Regime::Low);
    }

    #[test]
    fn zero_noise_classical_is_gradient_descent() {
        let domain = BoxDomain::cube(2, -5.0, 5.0).unwrap();
        let q = Quadratic::diagonal(vec![1.0, 4.0]).unwrap();
        let start = Point::new(vec![2.0, -1.0]).unwrap();
        let cfg = SolverConfig::new(Variant::Classical, Arc::new(q.clone()), domain, classical(0.0, 0.1), 20)
            .with_initial(InitialPoint::Explicit(start.clone()));
        let trace = run(cfg, RngStream::new(3, 0)).unwrap();
        let mut x = start.into_vec();
        for r in &trace.records[1..] {
            let g = q.gradient(&x);
            x = x.iter().zip(&g).map(|(a, b)| a - 0.1 * b).collect();
            assert_eq!(r.position.as_slice(), x.as_slice());
        }
    }

    #[test]
    fn same_seed_same_trace() {
        let domain = BoxDomain::cube(2, -20.0, 20.0).unwrap();
        let cfg = SolverConfig::new(Variant::TwoStage, rastrigin(0.01, 2), domain, practical(), 300);
        let a = run(cfg.clone(), RngStream::new(77, 5)).unwrap();
        let b = run(cfg, RngStream::new(77, 5)).unwrap();
        // The initial record's cutoff is NaN, so compare renderings.
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }

    #[test]
    fn best_so_far_is_running_minimum() {
        let domain = BoxDomain::cube(2, -20.0, 20.0).unwrap();
        let cfg = SolverConfig::new(Variant::TwoStage, rastrigin(0.01, 2), domain, practical(), 2000);
        let trace = run(cfg, RngStream::new(4, 0)).unwrap();
        let best = trace.best_values();
        assert!(best.windows(2).all(|w| w[1] <= w[0]));
        let min = trace.records.iter().map(|r| r.f_value).fold(f64::INFINITY, f64::min);
        assert_eq!(trace.best.f_value, min);
        assert_eq!(*best.last().unwrap(), min);
        assert_eq!(trace.best_until(trace.len()).unwrap(), &trace.best);
    }

    #[test]
    fn two_stage_regime_labels_follow_predecessor() {
        let domain = BoxDomain::cube(2, -20.0, 20.0).unwrap();
        let cfg = SolverConfig::new(Variant::TwoStage, rastrigin(0.01, 2), domain, practical(), 3000);
        let trace = run(cfg, RngStream::new(8, 1)).unwrap();
        for w in trace.records.windows(2) {
            let expected = if w[0].f_value < w[1].cutoff {
                Regime::Low
            } else {
                Regime::High
            };
            assert_eq!(w[1].regime, expected, "step {}", w[1].n);
            let expected_sigma = if expected == Regime::Low {
                (w[0].n.max(1) as f64).recip()
            } else {
                20.0
            };
            assert_abs_diff_eq!(w[1].sigma_used, expected_sigma, epsilon = 1e-15);
        }
    }

    #[test]
    fn practical_cutoff_is_running_median() {
        let domain = BoxDomain::cube(2, -20.0, 20.0).unwrap();
        let cfg = SolverConfig::new(Variant::TwoStage, rastrigin(0.05, 2), domain, practical(), 200);
        let trace = run(cfg, RngStream::new(12, 0)).unwrap();
        for k in 1..trace.len() {
            let hist: Vec<f64> = trace.records[..k].iter().map(|r| r.f_value).collect();
            let want = crate::schedule::update_cutoff(&hist, 0.5, None).unwrap();
            assert_eq!(trace.records[k].cutoff, want);
        }
    }

    #[test]
    fn two_stage_stays_in_box() {
        for policy in [BoundaryPolicy::Reflect, BoundaryPolicy::Clamp, BoundaryPolicy::Resample] {
            let domain = BoxDomain::cube(2, -20.0, 20.0).unwrap();
            let cfg = SolverConfig::new(Variant::TwoStage, rastrigin(0.05, 2), domain.clone(), practical(), 2000)
                .with_boundary(policy);
            let trace = run(cfg, RngStream::new(6, 0)).unwrap();
            assert!(trace.records.iter().all(|r| domain.contains(&r.position)));
        }
    }

    #[test]
    fn gradient_free_wraps() {
        let domain = BoxDomain::cube(1, 0.0, 4.0).unwrap();
        let region = BoxDomain::cube(1, 1.5, 2.5).unwrap();
        let cfg = SolverConfig::gradient_free(domain.clone(), region, 0.4, 5000)
            .with_initial(InitialPoint::Explicit(Point::new(vec![1.0]).unwrap()));
        let trace = run(cfg, RngStream::new(3, 3)).unwrap();
        assert!(trace.records.iter().all(|r| r.position[0] >= 0.0 && r.position[0] < 4.0));
        for w in trace.records.windows(2) {
            let inside = (1.5..=2.5).contains(&w[0].position[0]);
            assert_eq!(w[1].sigma_used, if inside { 0.4 } else { 2.5 });
        }
    }

    #[test]
    fn config_validation() {
        let domain = BoxDomain::cube(2, -1.0, 1.0).unwrap();
        let cfg = SolverConfig::new(Variant::TwoStage, rastrigin(0.05, 2), domain.clone(), classical(1.0, 1.0), 10);
        assert!(matches!(cfg.validate(), Err(Error::Config { .. })));
        let cfg = SolverConfig::new(Variant::Restart, rastrigin(0.05, 2), domain.clone(), practical(), 0);
        assert!(cfg.validate().is_err());
        let cfg = SolverConfig::new(Variant::Restart, rastrigin(0.05, 3), domain.clone(), practical(), 5);
        assert!(cfg.validate().is_err());
        let cfg = SolverConfig::new(Variant::Restart, rastrigin(0.05, 2), domain.clone(), practical(), 5)
            .with_initial(InitialPoint::Explicit(Point::new(vec![3.0, 0.0]).unwrap()));
        assert!(cfg.validate().is_err());
        let cfg = SolverConfig::new(
            Variant::Batch { batch_rule: BatchRule::Proposed },
            rastrigin(0.05, 2),
            domain.clone(),
            practical(),
            5,
        );
        assert!(cfg.validate().is_err());
        let cfg = SolverConfig::gradient_free(domain.clone(), domain, 0.0, 5);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn batch_sizes() {
        assert_eq!(BatchRule::Proposed.size(7), (7, false));
        assert_eq!(BatchRule::Classical.size(10), (5, false));
        assert_eq!(BatchRule::Classical.size(0), (3, false));
        assert_eq!(BatchRule::Power { scale: 0.0, exponent: 1.0 }.size(4), (1, true));
        assert_eq!(BatchRule::Power { scale: 1.0, exponent: 0.5 }.size(10), (4, false));
    }

    #[test]
    fn clamped_batch_size_leaves_warning() {
        use crate::objective::{StochasticRastrigin, StochasticSampleParams};
        let p = RastriginParams::new(1.0, 1.0, 0.05, 2).unwrap();
        let stoch = Arc::new(
            StochasticRastrigin::new(p, StochasticSampleParams::from_variance(0.5).unwrap()).unwrap(),
        );
        let domain = BoxDomain::cube(2, -20.0, 20.0).unwrap();
        let cfg = SolverConfig::new(
            Variant::Batch {
                batch_rule: BatchRule::Power { scale: 0.0, exponent: 1.0 },
            },
            rastrigin(0.05, 2),
            domain,
            practical(),
            3,
        )
        .with_stochastic(stoch);
        let trace = run(cfg, RngStream::new(1, 0)).unwrap();
        assert_eq!(trace.warnings.len(), 4);
        assert!(trace.records.iter().all(|r| r.batch_size == Some(1)));
    }

    #[test]
    fn csv_roundtrip_of_trace() {
        let domain = BoxDomain::cube(2, -20.0, 20.0).unwrap();
        let cfg = SolverConfig::new(Variant::TwoStage, rastrigin(0.05, 2), domain, practical(), 50);
        let trace = run(cfg, RngStream::new(10, 0)).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf, true).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("n,f_value,cutoff,sigma_used,regime,best_f,x0,x1\n"));
        let rows = read_trace_csv(buf.as_slice()).unwrap();
        assert_eq!(rows.len(), trace.len());
        for (row, rec) in rows.iter().zip(&trace.records) {
            assert_eq!(row.f_value, rec.f_value);
            assert_eq!(row.coords.as_slice(), rec.position.as_slice());
            assert_eq!(row.regime, rec.regime);
        }
        let mut plain = Vec::new();
        trace.write_csv(&mut plain, false).unwrap();
        assert!(String::from_utf8(plain).unwrap().starts_with("n,f_value,cutoff,sigma_used,regime,best_f\n"));
    }
}
