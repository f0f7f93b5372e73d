//! Sublevel-set volume estimation and curvature estimation.
//!
//! The volume fraction `G(f) = |{x : f(x) <= f}| / |X|` is estimated by the
//! empirical CDF of objective values at near-uniform points, either i.i.d.
//! draws from the box or iterates produced by a high-noise step. Inverting it
//! at `n^-alpha` yields cutoffs whose sublevel sets shrink at the prescribed
//! rate.
//!
//! Two curvature estimators are provided. [`estimate_bounds`] gives a crude
//! upper bound on the largest Hessian eigenvalue from divided differences of
//! the gradient and a lower bound on the smallest from the volume of
//! sublevel sets. [`estimate_b1b2_iterative`] refines both from samples drawn
//! from increasingly small sublevel sets.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::{distance, BoxDomain, Objective, Point};
use crate::sampler::RngStream;
use crate::schedule::{critical_constants, CurvatureBounds};
use crate::solver::RunTrace;

/// Pairs of points closer than this are ignored by divided differences.
const MIN_SEPARATION: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    IidUniform,
    HighVarianceIterates,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::IidUniform => "iid_uniform",
            Provenance::HighVarianceIterates => "high_variance_iterates",
        }
    }
}

/// Step-function CDF of a finite sample of objective values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalCdf {
    samples: Vec<f64>,
    provenance: Provenance,
}

impl EmpiricalCdf {
    /// Sorts `values`; fails if it is empty or holds a NaN.
    pub fn from_values(mut values: Vec<f64>, provenance: Provenance) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyEstimate("no samples to build a CDF from".into()));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::invalid("CDF samples contain NaN"));
        }
        values.sort_by(f64::total_cmp);
        Ok(EmpiricalCdf {
            samples: values,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn min(&self) -> f64 {
        self.samples[0]
    }

    pub fn max(&self) -> f64 {
        self.samples[self.samples.len() - 1]
    }

    /// Fraction of samples `<= value`.
    pub fn cdf(&self, value: f64) -> f64 {
        self.samples.partition_point(|&s| s <= value) as f64 / self.len() as f64
    }

    /// Smallest sample `v` with `cdf(v) >= level`, for `level` in `(0, 1]`.
    pub fn inverse(&self, level: f64) -> Result<f64> {
        if !(level > 0.0 && level <= 1.0) {
            return Err(Error::invalid(format!("CDF level {level} outside (0, 1]")));
        }
        let n = self.len();
        // cdf(samples[k]) >= (k+1)/n, with equality at the last copy of a tie,
        // so the answer is samples[ceil(level n) - 1].
        let k = ((level * n as f64).ceil() as usize).clamp(1, n);
        // `level * n` can round above an exact integer; compare the way `cdf` does.
        let k = if k > 1 && (k - 1) as f64 / n as f64 >= level { k - 1 } else { k };
        Ok(self.samples[k - 1])
    }

    /// Largest pointwise gap `sup |F(v) - G(v)|` between two step CDFs.
    pub fn sup_distance(&self, other: &EmpiricalCdf) -> f64 {
        let mut gap: f64 = 0.0;
        for v in self.samples.iter().chain(other.samples.iter()) {
            gap = gap.max((self.cdf(*v) - other.cdf(*v)).abs());
        }
        gap
    }
}

/// Evaluates the objective at `n` uniform draws from `domain`.
///
/// Points are drawn sequentially from `rng` and evaluated in parallel, so the
/// result does not depend on the thread count.
pub fn build_cdf_iid(
    objective: &dyn Objective,
    domain: &BoxDomain,
    n: usize,
    rng: &mut RngStream,
) -> Result<EmpiricalCdf> {
    if n < 1 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    domain.check_dim(objective.dim())?;
    let d = domain.dim();
    let mut coords = vec![0.0; n * d];
    for chunk in coords.chunks_mut(d) {
        rng.fill_uniform_in_box(domain, chunk);
    }
    let values: Vec<f64> = coords.par_chunks(d).map(|x| objective.value(x)).collect();
    EmpiricalCdf::from_values(values, Provenance::IidUniform)
}

/// Objective values of the iterates produced by a high-noise step or a
/// uniform restart.
pub fn high_variance_values(trace: &RunTrace) -> impl Iterator<Item = f64> + '_ {
    trace
        .records
        .iter()
        .filter(|r| r.regime.is_high_variance())
        .map(|r| r.f_value)
}

pub fn build_cdf_online(trace: &RunTrace) -> Result<EmpiricalCdf> {
    build_cdf_online_many(std::slice::from_ref(trace))
}

/// Pools the high-variance iterates of several traces.
pub fn build_cdf_online_many(traces: &[RunTrace]) -> Result<EmpiricalCdf> {
    let values: Vec<f64> = traces.iter().flat_map(high_variance_values).collect();
    if values.is_empty() {
        return Err(Error::EmptyEstimate(
            "trace has no iterates produced by a high-noise step".into(),
        ));
    }
    EmpiricalCdf::from_values(values, Provenance::HighVarianceIterates)
}

pub fn inverse_cdf(cdf: &EmpiricalCdf, level: f64) -> Result<f64> {
    cdf.inverse(level)
}

/// Cutoffs `f_n = F^-1(n^-alpha)` for `n = 1..=n_max`, made non-increasing.
pub fn cutoff_sequence(cdf: &EmpiricalCdf, alpha: f64, n_max: usize) -> Result<Vec<f64>> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
    }
    let mut out = Vec::with_capacity(n_max);
    let mut prev = f64::INFINITY;
    for n in 1..=n_max {
        let v = cdf.inverse((n as f64).powf(-alpha))?.min(prev);
        out.push(v);
        prev = v;
    }
    Ok(out)
}

/// A level `g` together with the volume of `{x : f(x) <= g}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSet {
    pub level: f64,
    pub volume: f64,
}

/// Monte Carlo volumes `F(g) |X|` for each level.
pub fn level_sets_from_cdf(cdf: &EmpiricalCdf, levels: &[f64], domain: &BoxDomain) -> Vec<LevelSet> {
    levels
        .iter()
        .map(|&level| LevelSet {
            level,
            volume: cdf.cdf(level) * domain.volume(),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvatureEstimate {
    /// Round index, starting at 1; 0 for the one-shot bound estimate.
    pub round: usize,
    pub b1_hat: f64,
    pub b2_hat: f64,
    pub f_star_hat: f64,
    pub diameter_hat: f64,
    /// Level used for the round (the smallest level for the one-shot estimate).
    pub level: f64,
    /// Largest admissible volume-decay exponent for these bounds with step
    /// `1/b2_hat`, when the bounds are usable.
    pub alpha_hat: Option<f64>,
    /// Samples drawn from the stream so far.
    pub samples_used: usize,
}

fn alpha_for(b1: f64, b2: f64, eta: Option<f64>) -> Option<f64> {
    let cb = CurvatureBounds::new(b1, b2).ok()?;
    let eta = eta.unwrap_or(1.0 / b2);
    critical_constants(&cb, eta).ok().map(|c| c.alpha_star)
}

/// Largest |G(y) - G(x)| / |y - x| over consecutive points and largest
/// consecutive distance. `None` when every pair coincides.
fn divided_differences(objective: &dyn Objective, points: &[Point]) -> Option<(f64, f64)> {
    let d = objective.dim();
    let mut g_prev = vec![0.0; d];
    let mut g_next = vec![0.0; d];
    let mut best: Option<(f64, f64)> = None;
    objective.gradient_into(&points[0], &mut g_prev);
    for w in points.windows(2) {
        objective.gradient_into(&w[1], &mut g_next);
        let dx = w[0].distance(&w[1]);
        if dx >= MIN_SEPARATION {
            let ratio = distance(&g_prev, &g_next) / dx;
            let (b2, diam) = best.unwrap_or((0.0, 0.0));
            best = Some((b2.max(ratio), diam.max(dx)));
        }
        std::mem::swap(&mut g_prev, &mut g_next);
    }
    best
}

/// One-shot curvature bounds from consecutive points and sublevel volumes.
///
/// `b2_hat` is the largest gradient divided difference over consecutive
/// points. `b1_hat` is the smallest of the first divided difference and
/// `b2^(1-d) |Pi|^-2 (2 (g - f*) / c0^2)^d` over the level sets, where `c0` is
/// the unit-volume ball radius. Without `f_star` the smallest level stands in
/// for it and only levels strictly above it are used. `b1_hat` is capped at
/// `b2_hat`.
pub fn estimate_bounds(
    objective: &dyn Objective,
    points: &[Point],
    level_sets: &[LevelSet],
    f_star: Option<f64>,
    c0: f64,
) -> Result<CurvatureEstimate> {
    if points.len() < 2 {
        return Err(Error::invalid("need at least two points"));
    }
    for p in points {
        if p.dim() != objective.dim() {
            return Err(Error::DimensionMismatch {
                expected: objective.dim(),
                got: p.dim(),
            });
        }
    }
    if !(c0 > 0.0 && c0.is_finite()) {
        return Err(Error::invalid(format!("c0 must be positive, got {c0}")));
    }
    let (b2, diameter) = divided_differences(objective, points)
        .ok_or_else(|| Error::EmptyEstimate("all consecutive points coincide".into()))?;
    let first = points
        .windows(2)
        .find(|w| w[0].distance(&w[1]) >= MIN_SEPARATION)
        .map(|w| distance(&objective.gradient(&w[0]), &objective.gradient(&w[1])) / w[0].distance(&w[1]))
        .expect("a separated pair exists");

    let f_star = match f_star {
        Some(f) => f,
        None => level_sets
            .iter()
            .map(|l| l.level)
            .fold(f64::INFINITY, f64::min),
    };
    let d = objective.dim() as i32;
    let mut b1 = first;
    let mut smallest_level = f64::INFINITY;
    for ls in level_sets {
        if !(ls.level > f_star) || !(ls.volume > 0.0) {
            continue;
        }
        let e = b2.powi(1 - d) * ls.volume.powi(-2) * (2.0 * (ls.level - f_star) / (c0 * c0)).powi(d);
        if e.is_finite() {
            b1 = b1.min(e);
        }
        smallest_level = smallest_level.min(ls.level);
    }
    let b1 = b1.min(b2);
    Ok(CurvatureEstimate {
        round: 0,
        b1_hat: b1,
        b2_hat: b2,
        f_star_hat: f_star,
        diameter_hat: diameter,
        level: smallest_level,
        alpha_hat: alpha_for(b1, b2, None),
        samples_used: points.len(),
    })
}

/// Level sequence for the iterative estimator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelRule {
    /// `g_1, g_2, ...`; round `l` uses `g_{1 + k_l}` (saturating at the end).
    Explicit(Vec<f64>),
    /// The first `warmup` samples fix a median `M`; round `l` uses
    /// `f* + (M - f*) ratio^(l-1)` with the running minimum `f*`.
    Geometric { warmup: usize, ratio: f64 },
}

impl Default for LevelRule {
    fn default() -> Self {
        LevelRule::Geometric {
            warmup: 1000,
            ratio: 0.5,
        }
    }
}

/// `k_l = m l (l - 1) / 2`.
pub fn round_offset(m: usize, l: usize) -> usize {
    m * l * (l - 1) / 2
}

/// Iterative curvature estimation from a stream of uniform samples.
///
/// Round `l` keeps the next `m l` samples whose value is strictly below the
/// round's level. Over consecutive kept samples it takes the largest gradient
/// divided difference as `b2_hat` and the largest distance as the diameter
/// `D`; the minimum value seen so far is `f*`. Then
/// `b1_hat = 8 |g - f*| / D^2`, the quadratic-bowl relation between depth and
/// diameter, capped at `b2_hat`.
///
/// When the stream runs out mid-round the completed rounds are returned inside
/// [`Error::PartialRounds`].
pub fn estimate_b1b2_iterative<I>(
    objective: &dyn Objective,
    samples: I,
    levels: &LevelRule,
    m: usize,
    rounds: usize,
    eta: Option<f64>,
) -> Result<Vec<CurvatureEstimate>>
where
    I: IntoIterator<Item = Point>,
{
    if m < 2 {
        return Err(Error::invalid("at least two samples per round are needed"));
    }
    if rounds < 1 {
        return Err(Error::invalid("at least one round is needed"));
    }
    let mut stream = samples.into_iter();
    let mut used = 0usize;
    let mut f_star = f64::INFINITY;

    let mut median = f64::NAN;
    match levels {
        LevelRule::Explicit(g) => {
            if g.is_empty() {
                return Err(Error::invalid("explicit level list is empty"));
            }
            if g.windows(2).any(|w| w[1] > w[0]) {
                return Err(Error::invalid("levels must be non-increasing"));
            }
        }
        LevelRule::Geometric { warmup, ratio } => {
            if *warmup < 1 || !(*ratio > 0.0 && *ratio < 1.0) {
                return Err(Error::invalid("geometric levels need warmup >= 1 and ratio in (0, 1)"));
            }
            let mut vals = Vec::with_capacity(*warmup);
            for _ in 0..*warmup {
                let Some(y) = stream.next() else {
                    return Err(Error::PartialRounds {
                        round: 1,
                        completed: Vec::new(),
                    });
                };
                used += 1;
                let v = objective.value(&y);
                f_star = f_star.min(v);
                vals.push(v);
            }
            vals.sort_by(f64::total_cmp);
            median = vals[(vals.len() - 1) / 2];
        }
    }

    let d = objective.dim();
    let mut grad_prev = vec![0.0; d];
    let mut grad_next = vec![0.0; d];
    let mut completed = Vec::with_capacity(rounds);
    for l in 1..=rounds {
        let level = match levels {
            LevelRule::Explicit(g) => g[round_offset(m, l).min(g.len() - 1)],
            LevelRule::Geometric { ratio, .. } => f_star + (median - f_star) * ratio.powi(l as i32 - 1),
        };
        let (mut b2, mut diameter) = (0.0f64, 0.0f64);
        let mut prev: Option<Point> = None;
        let mut kept = 0;
        while kept < m * l {
            let Some(y) = stream.next() else {
                return Err(Error::PartialRounds { round: l, completed });
            };
            used += 1;
            let v = objective.value(&y);
            if v >= level {
                continue;
            }
            kept += 1;
            f_star = f_star.min(v);
            objective.gradient_into(&y, &mut grad_next);
            if let Some(p) = &prev {
                let dx = p.distance(&y);
                if dx >= MIN_SEPARATION {
                    diameter = diameter.max(dx);
                    b2 = b2.max(distance(&grad_prev, &grad_next) / dx);
                }
            }
            std::mem::swap(&mut grad_prev, &mut grad_next);
            prev = Some(y);
        }
        let b1 = if diameter > 0.0 {
            (8.0 * (level - f_star).abs() / (diameter * diameter)).min(b2)
        } else {
            0.0
        };
        log::debug!("round {l}: level {level}, b1 {b1}, b2 {b2}, f* {f_star}");
        completed.push(CurvatureEstimate {
            round: l,
            b1_hat: b1,
            b2_hat: b2,
            f_star_hat: f_star,
            diameter_hat: diameter,
            level,
            alpha_hat: alpha_for(b1, b2, eta),
            samples_used: used,
        });
    }
    Ok(completed)
}
