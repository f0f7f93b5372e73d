//! JSON configuration shared by every subcommand.
//!
//! Every section and key is optional and falls back to the defaults below, so
//! `{}` is a valid configuration. Unknown keys are rejected. After command-line
//! overrides are applied the whole structure, defaults included, is written
//! next to the results as the effective configuration.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{build_cdf_iid, cutoff_sequence, LevelRule};
use crate::experiments::{default_checkpoints, ExperimentConfig};
use crate::objective::{
    BoxDomain, ObjectiveHandle, Point, Rastrigin, RastriginParams, StochasticHandle, StochasticRastrigin,
    StochasticSampleParams,
};
use crate::sampler::RngStream;
use crate::schedule::{
    ClassicalDecay, ClassicalSchedule, CurvatureBounds, LogarithmicSchedule, PracticalSchedule, Schedule,
    TheoreticalSchedule,
};
use crate::solver::{BatchRule, BoundaryPolicy, InitialPoint, SolverConfig, Variant};

/// Stream index reserved for building cutoff tables, so it never collides with
/// a run stream.
const TABLE_STREAM: u64 = u64::MAX;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    pub objective: ObjectiveSection,
    pub domain: DomainSection,
    pub schedule: ScheduleSection,
    pub solver: SolverSection,
    pub experiment: ExperimentSection,
    pub estimation: EstimationSection,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveName {
    Rastrigin,
    RastriginStochastic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveSection {
    pub name: ObjectiveName,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub dim: usize,
    /// Standard deviation of each noise channel of the stochastic objective.
    pub noise_std: f64,
}

impl Default for ObjectiveSection {
    fn default() -> Self {
        ObjectiveSection {
            name: ObjectiveName::Rastrigin,
            a: 1.0,
            b: 1.0,
            c: 0.05,
            dim: 2,
            noise_std: 0.5f64.sqrt(),
        }
    }
}

/// The cube `[low, high]^dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DomainSection {
    pub low: f64,
    pub high: f64,
}

impl Default for DomainSection {
    fn default() -> Self {
        DomainSection { low: -20.0, high: 20.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Theoretical,
    Practical,
    Classical,
    Logarithmic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    pub kind: ScheduleKind,
    pub alpha: f64,
    pub sigma0: f64,
    /// High noise level; `null` selects the restart form for the theoretical
    /// and logarithmic families.
    pub sigma_high: Option<f64>,
    pub eta: f64,
    pub quantile: f64,
    pub classical_decay: ClassicalDecay,
    pub monotone: bool,
    /// Curvature bounds, required by the theoretical family.
    pub b1: Option<f64>,
    pub b2: Option<f64>,
    /// `|Omega_0|`; defaults to the box volume.
    pub omega0_volume: Option<f64>,
    /// Logarithmic family: `|Omega_n| = volume_scale |X| / log n`.
    pub volume_scale: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        ScheduleSection {
            kind: ScheduleKind::Practical,
            alpha: 1.0,
            sigma0: 1.0,
            sigma_high: Some(20.0),
            eta: 1.0,
            quantile: 0.5,
            classical_decay: ClassicalDecay::InverseSqrtN,
            monotone: false,
            b1: None,
            b2: None,
            omega0_volume: None,
            volume_scale: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantName {
    Restart,
    TwoStage,
    Classical,
    Batch,
    GradientFree,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub variant: VariantName,
    pub iterations: usize,
    pub boundary: BoundaryPolicy,
    /// Explicit starting point; uniform in the box when absent.
    pub initial: Option<Vec<f64>>,
    pub batch_rule: BatchRule,
    /// Gradient-free chain: low-noise region `[region_low, region_high]^dim`.
    pub region_low: f64,
    pub region_high: f64,
    pub scale: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            variant: VariantName::TwoStage,
            iterations: 5000,
            boundary: BoundaryPolicy::Reflect,
            initial: None,
            batch_rule: BatchRule::Proposed,
            region_low: 1.5,
            region_high: 2.5,
            scale: 0.4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub runs: usize,
    pub eps: f64,
    /// Defaults to `{1, 2, 5} x 10^j` plus the final iteration.
    pub checkpoints: Option<Vec<usize>>,
    /// Worker threads; defaults to the number of logical cores.
    pub jobs: Option<usize>,
    pub bins: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            runs: 100,
            eps: 0.01,
            checkpoints: None,
            jobs: None,
            bins: 200,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleSource {
    Iid,
    Online,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimationSection {
    pub samples: usize,
    pub source: SampleSource,
    /// CDF levels at which `estimate-levelset` reports cutoffs.
    pub levels: Vec<f64>,
    pub m: usize,
    pub rounds: usize,
    /// Explicit decreasing levels for the iterative curvature estimator;
    /// geometric levels are used when absent.
    pub curvature_levels: Option<Vec<f64>>,
    pub warmup: usize,
    pub ratio: f64,
    /// Step size used to turn curvature estimates into an admissible alpha;
    /// defaults to `1 / b2_hat`.
    pub eta: Option<f64>,
}

impl Default for EstimationSection {
    fn default() -> Self {
        EstimationSection {
            samples: 1_000_000,
            source: SampleSource::Iid,
            levels: vec![0.85],
            m: 50,
            rounds: 4,
            curvature_levels: None,
            warmup: 1000,
            ratio: 0.5,
            eta: None,
        }
    }
}

fn config_err(field: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Config { .. } => e,
        other => Error::config(field, other.to_string()),
    }
}

impl Config {
    /// Parses JSON, reporting the path of the offending key on failure.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Config = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path == "." { "<root>".to_string() } else { path }, e.into_inner().to_string())
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("--config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks every section, building the solver objects on the way.
    pub fn validate(&self) -> Result<()> {
        self.experiment_config()?;
        self.level_rule()?;
        let e = &self.estimation;
        if e.samples < 1 {
            return Err(Error::config("estimation.samples", "must be at least 1"));
        }
        if let Some(l) = e.levels.iter().find(|l| !(**l > 0.0 && **l <= 1.0)) {
            return Err(Error::config("estimation.levels", format!("level {l} outside (0, 1]")));
        }
        if e.m < 2 {
            return Err(Error::config("estimation.m", "must be at least 2"));
        }
        if e.rounds < 1 {
            return Err(Error::config("estimation.rounds", "must be at least 1"));
        }
        Ok(())
    }

    pub fn rastrigin_params(&self) -> Result<RastriginParams> {
        let o = &self.objective;
        if o.dim < 1 {
            return Err(Error::config("objective.dim", "must be at least 1"));
        }
        RastriginParams::new(o.a, o.b, o.c, o.dim).map_err(config_err("objective"))
    }

    pub fn objective(&self) -> Result<ObjectiveHandle> {
        Ok(Arc::new(Rastrigin::new(self.rastrigin_params()?).map_err(config_err("objective"))?))
    }

    pub fn stochastic(&self) -> Result<Option<StochasticHandle>> {
        match self.objective.name {
            ObjectiveName::Rastrigin => Ok(None),
            ObjectiveName::RastriginStochastic => {
                let noise = StochasticSampleParams::isotropic(self.objective.noise_std)
                    .map_err(config_err("objective.noise_std"))?;
                let obj = StochasticRastrigin::new(self.rastrigin_params()?, noise).map_err(config_err("objective"))?;
                Ok(Some(Arc::new(obj)))
            }
        }
    }

    pub fn domain(&self) -> Result<BoxDomain> {
        let d = &self.domain;
        BoxDomain::cube(self.objective.dim.max(1), d.low, d.high).map_err(config_err("domain"))
    }

    /// Cutoff table `F^-1(min(1, v_n / |X|))` from i.i.d. samples, for the
    /// table-driven schedule families.
    fn cutoff_table(&self, volume_fraction: impl Fn(usize) -> f64) -> Result<Vec<f64>> {
        let obj = self.objective()?;
        let domain = self.domain()?;
        let mut rng = RngStream::new(self.seed, TABLE_STREAM);
        let samples = self.estimation.samples.max(1);
        let cdf = build_cdf_iid(obj.as_ref(), &domain, samples, &mut rng)?;
        let n_max = self.solver.iterations + 1;
        let mut table = Vec::with_capacity(n_max);
        let mut prev = f64::INFINITY;
        for n in 1..=n_max {
            let level = volume_fraction(n).clamp(f64::MIN_POSITIVE, 1.0);
            let v = cdf.inverse(level)?.min(prev);
            table.push(v);
            prev = v;
        }
        Ok(table)
    }

    pub fn schedule(&self) -> Result<Schedule> {
        let s = &self.schedule;
        let dim = self.objective.dim.max(1);
        match s.kind {
            ScheduleKind::Practical => {
                let sigma_high = s.sigma_high.ok_or_else(|| {
                    Error::config("schedule.sigma_high", "the practical schedule needs a high noise level")
                })?;
                let mut p = PracticalSchedule::new(s.sigma0, sigma_high, s.alpha, s.quantile, s.eta)
                    .map_err(config_err("schedule"))?;
                p.monotone = s.monotone;
                Ok(Schedule::Practical(p))
            }
            ScheduleKind::Classical => Ok(Schedule::Classical(
                ClassicalSchedule::new(s.sigma0, s.classical_decay, s.eta).map_err(config_err("schedule"))?,
            )),
            ScheduleKind::Theoretical => {
                let (b1, b2) = match (s.b1, s.b2) {
                    (Some(b1), Some(b2)) => (b1, b2),
                    _ => {
                        return Err(Error::config(
                            "schedule.b1",
                            "the theoretical schedule needs b1 and b2",
                        ))
                    }
                };
                let curvature = CurvatureBounds::new(b1, b2).map_err(config_err("schedule.b1"))?;
                let box_volume = self.domain()?.volume();
                let omega0 = s.omega0_volume.unwrap_or(box_volume);
                // Validate before paying for the table.
                TheoreticalSchedule::new(s.alpha, omega0, dim, s.eta, curvature, Vec::new())
                    .map_err(config_err("schedule"))?;
                let table = self.cutoff_table(|n| crate::schedule::volume_at(omega0, s.alpha, n) / box_volume)?;
                let mut t = TheoreticalSchedule::new(s.alpha, omega0, dim, s.eta, curvature, table)
                    .map_err(config_err("schedule"))?;
                t.sigma_high = s.sigma_high;
                Ok(Schedule::Theoretical(t))
            }
            ScheduleKind::Logarithmic => {
                LogarithmicSchedule::new(s.eta, s.volume_scale, dim, Vec::new()).map_err(config_err("schedule"))?;
                let frac = s.volume_scale;
                let table = self.cutoff_table(|n| frac / (n.max(3) as f64).ln())?;
                let box_volume = self.domain()?.volume();
                let mut l = LogarithmicSchedule::new(s.eta, s.volume_scale * box_volume, dim, table)
                    .map_err(config_err("schedule"))?;
                l.sigma_high = s.sigma_high;
                Ok(Schedule::Logarithmic(l))
            }
        }
    }

    pub fn build_solver(&self) -> Result<SolverConfig> {
        let sv = &self.solver;
        let domain = self.domain()?;
        let mut cfg = match sv.variant {
            VariantName::GradientFree => {
                let region = BoxDomain::cube(domain.dim(), sv.region_low, sv.region_high)
                    .map_err(config_err("solver.region_low"))?;
                SolverConfig::gradient_free(domain, region, sv.scale, sv.iterations)
            }
            other => {
                let variant = match other {
                    VariantName::Restart => Variant::Restart,
                    VariantName::TwoStage => Variant::TwoStage,
                    VariantName::Classical => Variant::Classical,
                    VariantName::Batch => Variant::Batch {
                        batch_rule: sv.batch_rule.clone(),
                    },
                    VariantName::GradientFree => unreachable!(),
                };
                let mut cfg = SolverConfig::new(variant, self.objective()?, domain, self.schedule()?, sv.iterations);
                if let Some(stoch) = self.stochastic()? {
                    cfg = cfg.with_stochastic(stoch);
                }
                cfg
            }
        };
        cfg.boundary = sv.boundary;
        if let Some(x0) = &sv.initial {
            if x0.len() != cfg.dim() {
                return Err(Error::config(
                    "solver.initial",
                    format!("expected {} coordinates, got {}", cfg.dim(), x0.len()),
                ));
            }
            cfg.initial = InitialPoint::Explicit(Point::new(x0.clone()).map_err(config_err("solver.initial"))?);
        }
        cfg.validate().map_err(|e| match e {
            Error::Config { field, message } if !field.contains('.') && field != "initial" => {
                Error::config(format!("solver.{field}"), message)
            }
            Error::Config { field, message } if field == "initial" => Error::config("solver.initial", message),
            other => other,
        })?;
        Ok(cfg)
    }

    pub fn experiment_config(&self) -> Result<ExperimentConfig> {
        let solver = self.build_solver()?;
        let ex = &self.experiment;
        let mut cfg = ExperimentConfig::new(solver, ex.runs, ex.eps, self.seed);
        cfg.checkpoints = ex
            .checkpoints
            .clone()
            .unwrap_or_else(|| default_checkpoints(self.solver.iterations));
        cfg.jobs = ex.jobs;
        cfg.validate()?;
        if ex.bins < 1 {
            return Err(Error::config("experiment.bins", "must be at least 1"));
        }
        Ok(cfg)
    }

    pub fn level_rule(&self) -> Result<LevelRule> {
        let e = &self.estimation;
        match &e.curvature_levels {
            Some(levels) => {
                if levels.is_empty() || levels.windows(2).any(|w| w[1] > w[0]) {
                    return Err(Error::config(
                        "estimation.curvature_levels",
                        "must be a non-empty non-increasing list",
                    ));
                }
                Ok(LevelRule::Explicit(levels.clone()))
            }
            None => {
                if e.warmup < 1 || !(e.ratio > 0.0 && e.ratio < 1.0) {
                    return Err(Error::config(
                        "estimation.ratio",
                        "geometric levels need warmup >= 1 and ratio in (0, 1)",
                    ));
                }
                Ok(LevelRule::Geometric {
                    warmup: e.warmup,
                    ratio: e.ratio,
                })
            }
        }
    }
}

/// Standalone cutoff table for a practical-style volume decay, exposed for
/// callers that build schedules by hand.
pub fn iid_cutoff_table(
    objective: &dyn crate::objective::Objective,
    domain: &BoxDomain,
    samples: usize,
    alpha: f64,
    n_max: usize,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    let cdf = build_cdf_iid(objective, domain, samples, rng)?;
    cutoff_sequence(&cdf, alpha, n_max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_uses_defaults() {
        let cfg = Config::from_json("{}").unwrap();
        assert_eq!(cfg, Config::default());
        cfg.validate().unwrap();
        let solver = cfg.build_solver().unwrap();
        assert_eq!(solver.variant, Variant::TwoStage);
        assert_eq!(solver.iterations, 5000);
    }

    #[test]
    fn effective_config_roundtrips() {
        let mut cfg = Config::default();
        cfg.seed = 99;
        cfg.solver.initial = Some(vec![1.0, 2.0]);
        let back = Config::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_report_their_path() {
        match Config::from_json(r#"{"schedule": {"alpah": 1.0}}"#).unwrap_err() {
            Error::Config { field, message } => {
                assert_eq!(field, "schedule.alpah");
                assert!(message.contains("alpah"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
        match Config::from_json(r#"{"objective": {"name": "ackley"}}"#).unwrap_err() {
            Error::Config { field, .. } => assert_eq!(field, "objective.name"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_values_report_their_path() {
        let cfg = Config::from_json(r#"{"schedule": {"quantile": 1.5}}"#).unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config { field, .. }) if field.starts_with("schedule")));
        let cfg = Config::from_json(r#"{"solver": {"iterations": 0}}"#).unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config { field, .. }) if field == "solver.iterations"));
        let cfg = Config::from_json(r#"{"solver": {"initial": [1.0]}}"#).unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config { field, .. }) if field == "solver.initial"));
        let cfg = Config::from_json(r#"{"solver": {"variant": "batch"}}"#).unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config { field, .. }) if field == "objective.name"));
        let cfg = Config::from_json(r#"{"schedule": {"kind": "theoretical"}}"#).unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config { field, .. }) if field == "schedule.b1"));
    }

    #[test]
    fn theoretical_schedule_gets_a_decreasing_table() {
        let cfg = Config::from_json(
            r#"{"schedule": {"kind": "theoretical", "b1": 1.0, "b2": 1.0, "eta": 1.0, "alpha": 0.01},
                "solver": {"variant": "restart", "iterations": 50},
                "estimation": {"samples": 2000}}"#,
        )
        .unwrap();
        match cfg.schedule().unwrap() {
            Schedule::Theoretical(t) => {
                assert_eq!(t.cutoffs.len(), 51);
                assert!(t.cutoffs.windows(2).all(|w| w[1] <= w[0]));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn stochastic_objective_enables_batch_variant() {
        let cfg = Config::from_json(
            r#"{"objective": {"name": "rastrigin_stochastic", "noise_std": 0.5},
                "solver": {"variant": "batch", "batch_rule": "classical"}}"#,
        )
        .unwrap();
        cfg.validate().unwrap();
        let cfg = Config::from_json(r#"{"solver": {"batch_rule": {"power": {"scale": 2.0, "exponent": 0.5}}}}"#).unwrap();
        assert_eq!(cfg.solver.batch_rule, BatchRule::Power { scale: 2.0, exponent: 0.5 });
    }

    #[test]
    fn gradient_free_uses_region() {
        let cfg = Config::from_json(
            r#"{"objective": {"dim": 1}, "domain": {"low": 0.0, "high": 4.0},
                "solver": {"variant": "gradient_free", "scale": 0.2, "region_low": 1.8, "region_high": 2.2}}"#,
        )
        .unwrap();
        let solver = cfg.build_solver().unwrap();
        assert!(matches!(solver.variant, Variant::GradientFree { scale, .. } if scale == 0.2));
    }
}
