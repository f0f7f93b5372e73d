//! Objective functions: the abstraction the solvers consume, the Rastrigin-type
//! benchmark `J1`, its sampled counterpart `J2`, and a central-difference
//! gradient used to cross-check the analytic derivatives.

use std::fmt;
use std::ops::Deref;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::RngStream;

/// A position in R^d. Never empty, never holds NaN or infinities.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Point(Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::invalid("a point needs at least one coordinate"));
        }
        if let Some(i) = coords.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "coordinate {i} is not finite ({})",
                coords[i]
            )));
        }
        Ok(Point(coords))
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "dimension must be at least 1");
        Point(vec![0.0; dim])
    }

    /// Wraps coordinates produced internally. Callers guarantee finiteness.
    pub(crate) fn from_raw(coords: Vec<f64>) -> Self {
        debug_assert!(!coords.is_empty());
        Point(coords)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Euclidean distance to `other`.
    pub fn distance(&self, other: &[f64]) -> f64 {
        distance(&self.0, other)
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl Deref for Point {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl fmt::Debug for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

impl TryFrom<Vec<f64>> for Point {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Point::new(v)
    }
}

impl From<Point> for Vec<f64> {
    fn from(p: Point) -> Vec<f64> {
        p.0
    }
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Axis-aligned search box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox", into = "RawBox")]
pub struct BoxDomain {
    low: Point,
    high: Point,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBox {
    low: Vec<f64>,
    high: Vec<f64>,
}

impl TryFrom<RawBox> for BoxDomain {
    type Error = Error;

    fn try_from(raw: RawBox) -> Result<Self> {
        BoxDomain::new(Point::new(raw.low)?, Point::new(raw.high)?)
    }
}

impl From<BoxDomain> for RawBox {
    fn from(b: BoxDomain) -> RawBox {
        RawBox {
            low: b.low.into_vec(),
            high: b.high.into_vec(),
        }
    }
}

impl BoxDomain {
    pub fn new(low: Point, high: Point) -> Result<Self> {
        if low.dim() != high.dim() {
            return Err(Error::DimensionMismatch {
                expected: low.dim(),
                got: high.dim(),
            });
        }
        for i in 0..low.dim() {
            if !(low[i] < high[i]) {
                return Err(Error::invalid(format!(
                    "box axis {i} has low {} >= high {}",
                    low[i], high[i]
                )));
            }
        }
        Ok(BoxDomain { low, high })
    }

    /// The cube `[low, high]^dim`.
    pub fn cube(dim: usize, low: f64, high: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("box dimension must be at least 1"));
        }
        BoxDomain::new(Point::new(vec![low; dim])?, Point::new(vec![high; dim])?)
    }

    pub fn dim(&self) -> usize {
        self.low.dim()
    }

    pub fn low(&self) -> &Point {
        &self.low
    }

    pub fn high(&self) -> &Point {
        &self.high
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.high[axis] - self.low[axis]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|i| self.width(i)).product()
    }

    pub fn center(&self) -> Point {
        Point::from_raw(
            self.low
                .iter()
                .zip(self.high.iter())
                .map(|(l, h)| 0.5 * (l + h))
                .collect(),
        )
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .enumerate()
                .all(|(i, v)| *v >= self.low[i] && *v <= self.high[i])
    }

    pub(crate) fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got,
            });
        }
        Ok(())
    }
}

/// A differentiable objective `f: R^d -> R`.
///
/// Implementations are pure; the slice passed in always has length `dim()`.
pub trait Objective: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> f64;

    fn gradient_into(&self, x: &[f64], out: &mut [f64]);

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        self.gradient_into(x, &mut g);
        g
    }

    /// The global minimizer, when known in closed form.
    fn minimizer(&self) -> Option<Point> {
        None
    }

    fn min_value(&self) -> Option<f64> {
        None
    }
}

pub type ObjectiveHandle = Arc<dyn Objective>;

/// An objective observed through noisy samples `J(x; zeta)` whose mean is a
/// deterministic objective.
pub trait StochasticObjective: Send + Sync {
    fn dim(&self) -> usize;

    /// The deterministic mean objective.
    fn mean(&self) -> &dyn Objective;

    /// Draws one sample, writes its gradient into `grad` and returns its value.
    fn sample_into(&self, x: &[f64], rng: &mut RngStream, grad: &mut [f64]) -> f64;

    /// Averages `m` independent samples (value and gradient). `m >= 1`.
    fn batch_into(&self, x: &[f64], m: usize, rng: &mut RngStream, grad: &mut [f64]) -> f64 {
        debug_assert!(m >= 1);
        let d = self.dim();
        let mut acc = vec![0.0; d];
        let mut g = vec![0.0; d];
        let mut value = 0.0;
        for _ in 0..m {
            value += self.sample_into(x, rng, &mut g);
            for (a, gi) in acc.iter_mut().zip(&g) {
                *a += gi;
            }
        }
        let inv = 1.0 / m as f64;
        for (out, a) in grad.iter_mut().zip(&acc) {
            *out = a * inv;
        }
        value * inv
    }
}

pub type StochasticHandle = Arc<dyn StochasticObjective>;

/// Parameters of `J1(x) = a (d - sum cos(b x_i)) + c sum x_i^2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RastriginParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: usize,
}

impl RastriginParams {
    pub fn new(a: f64, b: f64, c: f64, d: usize) -> Result<Self> {
        let p = RastriginParams { a, b, c, d };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.a.is_finite()) {
            return Err(Error::invalid(format!("a must be positive, got {}", self.a)));
        }
        if !(self.b > 0.0 && self.b.is_finite()) {
            return Err(Error::invalid(format!("b must be positive, got {}", self.b)));
        }
        if !(self.c >= 0.0 && self.c.is_finite()) {
            return Err(Error::invalid(format!("c must be non-negative, got {}", self.c)));
        }
        if self.d == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        Ok(())
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: x.len(),
            });
        }
        Ok(())
    }
}

/// Evaluates `J1` at `x`.
pub fn j1_eval(p: &RastriginParams, x: &[f64]) -> Result<f64> {
    p.check(x)?;
    Ok(rastrigin_value(p, x))
}

/// Analytic gradient of `J1`: `a b sin(b x_i) + 2 c x_i`.
pub fn j1_grad(p: &RastriginParams, x: &[f64]) -> Result<Point> {
    p.check(x)?;
    let mut g = vec![0.0; p.d];
    rastrigin_grad(p, x, &mut g);
    Ok(Point::from_raw(g))
}

fn rastrigin_value(p: &RastriginParams, x: &[f64]) -> f64 {
    let cos_sum: f64 = x.iter().map(|v| (p.b * v).cos()).sum();
    let sq: f64 = x.iter().map(|v| v * v).sum();
    p.a * (p.d as f64 - cos_sum) + p.c * sq
}

fn rastrigin_grad(p: &RastriginParams, x: &[f64], out: &mut [f64]) {
    let ab = p.a * p.b;
    for (o, v) in out.iter_mut().zip(x) {
        *o = ab * (p.b * v).sin() + 2.0 * p.c * v;
    }
}

#[derive(Clone, Debug)]
pub struct Rastrigin {
    params: RastriginParams,
}

impl Rastrigin {
    pub fn new(params: RastriginParams) -> Result<Self> {
        params.validate()?;
        Ok(Rastrigin { params })
    }

    pub fn params(&self) -> &RastriginParams {
        &self.params
    }
}

impl Objective for Rastrigin {
    fn dim(&self) -> usize {
        self.params.d
    }

    fn value(&self, x: &[f64]) -> f64 {
        rastrigin_value(&self.params, x)
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        rastrigin_grad(&self.params, x, out)
    }

    fn minimizer(&self) -> Option<Point> {
        // With c = 0 every lattice point 2k*pi/b is a global minimizer.
        (self.params.c > 0.0).then(|| Point::zeros(self.params.d))
    }

    fn min_value(&self) -> Option<f64> {
        Some(0.0)
    }
}

/// Standard deviations of the two noise channels of `J2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StochasticSampleParams {
    pub sin_std: f64,
    pub cos_std: f64,
}

impl StochasticSampleParams {
    /// Frequency of the sinusoidal noise channels.
    pub const FREQUENCY: f64 = 10.0;

    pub fn new(sin_std: f64, cos_std: f64) -> Result<Self> {
        if !(sin_std >= 0.0 && cos_std >= 0.0 && sin_std.is_finite() && cos_std.is_finite()) {
            return Err(Error::invalid(format!(
                "noise standard deviations must be finite and non-negative, got ({sin_std}, {cos_std})"
            )));
        }
        Ok(StochasticSampleParams { sin_std, cos_std })
    }

    /// Both channels with the same standard deviation.
    pub fn isotropic(std: f64) -> Result<Self> {
        Self::new(std, std)
    }

    /// Both channels with the given variance.
    pub fn from_variance(var: f64) -> Result<Self> {
        if !(var >= 0.0) {
            return Err(Error::invalid(format!("noise variance must be non-negative, got {var}")));
        }
        Self::isotropic(var.sqrt())
    }
}

/// `J1` perturbed by `zeta1 sum sin(10 x_i) + zeta2 sum cos(10 x_i)`.
#[derive(Clone, Debug)]
pub struct StochasticRastrigin {
    mean: Rastrigin,
    noise: StochasticSampleParams,
}

impl StochasticRastrigin {
    pub fn new(params: RastriginParams, noise: StochasticSampleParams) -> Result<Self> {
        Ok(StochasticRastrigin {
            mean: Rastrigin::new(params)?,
            noise,
        })
    }

    pub fn noise(&self) -> &StochasticSampleParams {
        &self.noise
    }

    /// Value and gradient for fixed noise coefficients. Both are linear in
    /// `(z1, z2)`, so averaging samples equals plugging in averaged noise.
    fn eval_with(&self, x: &[f64], z1: f64, z2: f64, grad: &mut [f64]) -> f64 {
        let w = StochasticSampleParams::FREQUENCY;
        let mut sin_sum = 0.0;
        let mut cos_sum = 0.0;
        self.mean.gradient_into(x, grad);
        for (g, v) in grad.iter_mut().zip(x) {
            let (s, c) = (w * v).sin_cos();
            sin_sum += s;
            cos_sum += c;
            *g += w * (z1 * c - z2 * s);
        }
        self.mean.value(x) + z1 * sin_sum + z2 * cos_sum
    }
}

impl StochasticObjective for StochasticRastrigin {
    fn dim(&self) -> usize {
        self.mean.dim()
    }

    fn mean(&self) -> &dyn Objective {
        &self.mean
    }

    fn sample_into(&self, x: &[f64], rng: &mut RngStream, grad: &mut [f64]) -> f64 {
        let z1 = self.noise.sin_std * rng.standard_normal();
        let z2 = self.noise.cos_std * rng.standard_normal();
        self.eval_with(x, z1, z2, grad)
    }

    fn batch_into(&self, x: &[f64], m: usize, rng: &mut RngStream, grad: &mut [f64]) -> f64 {
        debug_assert!(m >= 1);
        // Same draws, in the same order, as `m` calls to `sample_into`.
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        for _ in 0..m {
            s1 += self.noise.sin_std * rng.standard_normal();
            s2 += self.noise.cos_std * rng.standard_normal();
        }
        let inv = 1.0 / m as f64;
        self.eval_with(x, s1 * inv, s2 * inv, grad)
    }
}

/// One draw of `J2(x; zeta)` and its gradient with the same `zeta`.
pub fn j2_sample(
    p: &RastriginParams,
    s: &StochasticSampleParams,
    x: &[f64],
    rng: &mut RngStream,
) -> Result<(f64, Point)> {
    p.check(x)?;
    let obj = StochasticRastrigin::new(*p, *s)?;
    let mut g = vec![0.0; p.d];
    let v = obj.sample_into(x, rng, &mut g);
    Ok((v, Point::from_raw(g)))
}

/// Average of `m` independent `J2` draws, value and gradient.
pub fn batch_eval_grad(
    p: &RastriginParams,
    s: &StochasticSampleParams,
    x: &[f64],
    m: usize,
    rng: &mut RngStream,
) -> Result<(f64, Point)> {
    p.check(x)?;
    if m == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    let obj = StochasticRastrigin::new(*p, *s)?;
    let mut g = vec![0.0; p.d];
    let v = obj.batch_into(x, m, rng, &mut g);
    Ok((v, Point::from_raw(g)))
}

/// `f(x) = 1/2 sum lambda_i (x_i - center_i)^2`.
#[derive(Clone, Debug)]
pub struct Quadratic {
    eigenvalues: Vec<f64>,
    center: Point,
}

impl Quadratic {
    pub fn diagonal(eigenvalues: Vec<f64>) -> Result<Self> {
        let d = eigenvalues.len();
        Self::centered(eigenvalues, Point::new(vec![0.0; d.max(1)])?)
    }

    pub fn centered(eigenvalues: Vec<f64>, center: Point) -> Result<Self> {
        if eigenvalues.is_empty() || eigenvalues.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(Error::invalid("quadratic eigenvalues must be positive and finite"));
        }
        if center.dim() != eigenvalues.len() {
            return Err(Error::DimensionMismatch {
                expected: eigenvalues.len(),
                got: center.dim(),
            });
        }
        Ok(Quadratic { eigenvalues, center })
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        0.5 * x
            .iter()
            .zip(self.center.iter())
            .zip(&self.eigenvalues)
            .map(|((v, c), l)| l * (v - c) * (v - c))
            .sum::<f64>()
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        for (((o, v), c), l) in out
            .iter_mut()
            .zip(x)
            .zip(self.center.iter())
            .zip(&self.eigenvalues)
        {
            *o = l * (v - c);
        }
    }

    fn minimizer(&self) -> Option<Point> {
        Some(self.center.clone())
    }

    fn min_value(&self) -> Option<f64> {
        Some(0.0)
    }
}

/// The zero function. Used by the gradient-free chain when no objective is
/// configured, so records still carry a value.
#[derive(Clone, Copy, Debug)]
pub struct Flat {
    pub dim: usize,
}

impl Objective for Flat {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, _x: &[f64]) -> f64 {
        0.0
    }

    fn gradient_into(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` along every axis.
pub fn finite_diff_grad<F>(f: F, x: &[f64], h: f64) -> Result<Point>
where
    F: Fn(&[f64]) -> f64,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!("step h must be positive, got {h}")));
    }
    if x.is_empty() {
        return Err(Error::invalid("cannot differentiate at an empty point"));
    }
    let mut probe = x.to_vec();
    let mut g = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let fp = f(&probe);
        probe[i] = x[i] - h;
        let fm = f(&probe);
        probe[i] = x[i];
        g.push((fp - fm) / (2.0 * h));
    }
    Ok(Point::from_raw(g))
}

/// Largest normalised discrepancy `|g - g_fd|_inf / (1 + |g|_inf)` between an
/// objective's analytic gradient and central differences over `points`.
pub fn max_gradient_error(obj: &dyn Objective, points: &[Point], h: f64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for x in points {
        if x.dim() != obj.dim() {
            return Err(Error::DimensionMismatch {
                expected: obj.dim(),
                got: x.dim(),
            });
        }
        let g = obj.gradient(x);
        let fd = finite_diff_grad(|y| obj.value(y), x, h)?;
        let diff = g
            .iter()
            .zip(fd.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let scale = 1.0 + g.iter().map(|v| v.abs()).fold(0.0, f64::max);
        worst = worst.max(diff / scale);
    }
    Ok(worst)
}
