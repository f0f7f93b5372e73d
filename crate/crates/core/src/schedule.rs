//! Iteration-dependent scalars: step size, low and high noise levels, cutoff
//! values and sublevel-set volume targets.
//!
//! Four families are provided:
//!
//! * [`TheoreticalSchedule`]: constant step, volumes decaying like `n^-alpha`
//!   and `sigma_n = c0 |Omega_n|^(1/d) / sqrt(log n)`, with cutoffs read from a
//!   precomputed table.
//! * [`PracticalSchedule`]: `sigma0 n^-alpha` below a running-quantile cutoff
//!   and a fixed large `sigma_high` above it.
//! * [`ClassicalSchedule`]: state-independent annealing, `1/sqrt(n)` or
//!   `1/sqrt(log n)` decay.
//! * [`LogarithmicSchedule`]: step `~ 1/log log n`, volume `~ 1/log n`.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Radius of the `d`-dimensional ball of unit volume,
/// `pi^(-1/2) Gamma(d/2 + 1)^(1/d)`.
pub fn unit_ball_radius(d: usize) -> Result<f64> {
    if d < 1 {
        return Err(Error::invalid("dimension must be at least 1"));
    }
    Ok((ln_gamma_half_integer(d) / d as f64).exp() / PI.sqrt())
}

/// `ln Gamma(d/2 + 1)` by upward recursion from `Gamma(1) = 1` or
/// `Gamma(3/2) = sqrt(pi)/2`.
fn ln_gamma_half_integer(d: usize) -> f64 {
    let (mut x, mut acc) = if d.is_multiple_of(2) {
        (1.0, 0.0)
    } else {
        (1.5, (PI.sqrt() / 2.0).ln())
    };
    let target = d as f64 / 2.0 + 1.0;
    while x < target - 0.25 {
        acc += x.ln();
        x += 1.0;
    }
    acc
}

/// Eigenvalue bounds `b1 I <= Hess f <= b2 I` near the global minimizer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvatureBounds {
    pub b1: f64,
    pub b2: f64,
}

impl CurvatureBounds {
    pub fn new(b1: f64, b2: f64) -> Result<Self> {
        if !(b1 > 0.0 && b1 <= b2 && b2.is_finite()) {
            return Err(Error::invalid(format!(
                "curvature bounds need 0 < b1 <= b2 < inf, got b1={b1}, b2={b2}"
            )));
        }
        Ok(CurvatureBounds { b1, b2 })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalConstants {
    pub gamma_star: f64,
    pub c_star: f64,
    /// Upper limit on the admissible volume-decay exponent.
    pub alpha_star: f64,
}

/// `gamma* = (2 eta b2 - eta^2 b2^2)^-1`, `c* = (b1/b2)^(3/2) / (4 gamma*)`,
/// `alpha* = c*^2 / 2`. Requires `0 < eta < 2/b2`.
pub fn critical_constants(cb: &CurvatureBounds, eta: f64) -> Result<CriticalConstants> {
    if !(eta > 0.0 && eta < 2.0 / cb.b2) {
        return Err(Error::invalid(format!(
            "step size {eta} outside (0, 2/b2) = (0, {})",
            2.0 / cb.b2
        )));
    }
    let contraction = 2.0 * eta * cb.b2 - eta * eta * cb.b2 * cb.b2;
    let gamma_star = 1.0 / contraction;
    let c_star = contraction / 4.0 * (cb.b1 / cb.b2).powf(1.5);
    Ok(CriticalConstants {
        gamma_star,
        c_star,
        alpha_star: c_star * c_star / 2.0,
    })
}

/// Sublevel volumes `|Omega_1| = |Omega_0|`, `|Omega_{n+1}| = |Omega_0| n^-alpha`.
pub fn volume_at(omega0: f64, alpha: f64, n: usize) -> f64 {
    if n <= 1 {
        omega0
    } else {
        omega0 * ((n - 1) as f64).powf(-alpha)
    }
}

/// Cutoff lookup in a table indexed from `n = 1`; saturates at both ends.
fn table_lookup(table: &[f64], n: usize) -> f64 {
    match table.len() {
        0 => f64::INFINITY,
        len => table[n.saturating_sub(1).min(len - 1)],
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoreticalSchedule {
    pub alpha: f64,
    pub omega0_volume: f64,
    pub dim: usize,
    pub eta: f64,
    pub curvature: CurvatureBounds,
    /// `f_n` for `n = 1, 2, ...`; the last entry is reused past the end.
    pub cutoffs: Vec<f64>,
    /// Noise above the cutoff for the two-stage variant. `None` means the
    /// restart form (uniform resampling).
    pub sigma_high: Option<f64>,
}

impl TheoreticalSchedule {
    pub fn new(
        alpha: f64,
        omega0_volume: f64,
        dim: usize,
        eta: f64,
        curvature: CurvatureBounds,
        cutoffs: Vec<f64>,
    ) -> Result<Self> {
        let consts = critical_constants(&curvature, eta)?;
        if !(alpha > 0.0 && alpha < consts.alpha_star) {
            return Err(Error::invalid(format!(
                "alpha {alpha} outside (0, alpha*) = (0, {})",
                consts.alpha_star
            )));
        }
        if !(omega0_volume > 0.0 && omega0_volume.is_finite()) {
            return Err(Error::invalid("initial sublevel volume must be positive"));
        }
        if dim == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        Ok(TheoreticalSchedule {
            alpha,
            omega0_volume,
            dim,
            eta,
            curvature,
            cutoffs,
            sigma_high: None,
        })
    }

    pub fn volume(&self, n: usize) -> f64 {
        volume_at(self.omega0_volume, self.alpha, n)
    }

    pub fn cutoff(&self, n: usize) -> f64 {
        table_lookup(&self.cutoffs, n)
    }
}

/// `c0 |Omega_n|^(1/d) / sqrt(log n)`; defined for `n >= 2`.
pub fn theoretical_sigma(sched: &TheoreticalSchedule, n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::invalid(format!("noise level needs n >= 2, got {n}")));
    }
    let c0 = unit_ball_radius(sched.dim)?;
    Ok(c0 * sched.volume(n).powf(1.0 / sched.dim as f64) / (n as f64).ln().sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PracticalSchedule {
    pub sigma0: f64,
    pub sigma_high: f64,
    pub alpha: f64,
    pub quantile: f64,
    pub eta: f64,
    /// Clamp the running-quantile cutoff so it never increases.
    #[serde(default)]
    pub monotone: bool,
}

impl PracticalSchedule {
    pub fn new(sigma0: f64, sigma_high: f64, alpha: f64, quantile: f64, eta: f64) -> Result<Self> {
        let s = PracticalSchedule {
            sigma0,
            sigma_high,
            alpha,
            quantile,
            eta,
            monotone: false,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma0", self.sigma0),
            ("sigma_high", self.sigma_high),
            ("alpha", self.alpha),
            ("eta", self.eta),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.quantile > 0.0 && self.quantile < 1.0) {
            return Err(Error::invalid(format!(
                "quantile must lie in (0, 1), got {}",
                self.quantile
            )));
        }
        Ok(())
    }

    pub fn sigma_low(&self, n: usize) -> f64 {
        self.sigma0 * (n.max(1) as f64).powf(-self.alpha)
    }
}

/// Two-level noise: `sigma0 n^-alpha` strictly below the cutoff, `sigma_high`
/// at or above it.
pub fn practical_sigma(sched: &PracticalSchedule, n: usize, f_value: f64, cutoff: f64) -> f64 {
    if f_value < cutoff {
        sched.sigma_low(n)
    } else {
        sched.sigma_high
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassicalDecay {
    InverseSqrtN,
    InverseSqrtLogN,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassicalSchedule {
    pub sigma0: f64,
    pub decay: ClassicalDecay,
    pub eta: f64,
}

impl ClassicalSchedule {
    pub fn new(sigma0: f64, decay: ClassicalDecay, eta: f64) -> Result<Self> {
        if !(sigma0 >= 0.0 && sigma0.is_finite()) {
            return Err(Error::invalid(format!("sigma0 must be non-negative, got {sigma0}")));
        }
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::invalid(format!("eta must be positive, got {eta}")));
        }
        Ok(ClassicalSchedule { sigma0, decay, eta })
    }

    /// `sigma0/sqrt(n)` or `sigma0/sqrt(log n)`; `n` is floored at 1 and 2
    /// respectively so the value stays finite.
    pub fn sigma(&self, n: usize) -> f64 {
        match self.decay {
            ClassicalDecay::InverseSqrtN => self.sigma0 / (n.max(1) as f64).sqrt(),
            ClassicalDecay::InverseSqrtLogN => self.sigma0 / (n.max(2) as f64).ln().sqrt(),
        }
    }
}

/// The slower schedule family: `eta_n = eta_scale / log log n`,
/// `|Omega_n| = volume_scale / log n`, and the same noise law as the
/// theoretical family. Indices below 3 are evaluated at 3.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogarithmicSchedule {
    pub eta_scale: f64,
    pub volume_scale: f64,
    pub dim: usize,
    pub cutoffs: Vec<f64>,
    pub sigma_high: Option<f64>,
}

impl LogarithmicSchedule {
    pub fn new(eta_scale: f64, volume_scale: f64, dim: usize, cutoffs: Vec<f64>) -> Result<Self> {
        if !(eta_scale > 0.0 && volume_scale > 0.0 && eta_scale.is_finite() && volume_scale.is_finite()) {
            return Err(Error::invalid("logarithmic schedule scales must be positive"));
        }
        if dim == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        Ok(LogarithmicSchedule {
            eta_scale,
            volume_scale,
            dim,
            cutoffs,
            sigma_high: None,
        })
    }

    pub fn eta(&self, n: usize) -> f64 {
        self.eta_scale / (n.max(3) as f64).ln().ln()
    }

    pub fn volume(&self, n: usize) -> f64 {
        self.volume_scale / (n.max(3) as f64).ln()
    }

    pub fn sigma(&self, n: usize) -> f64 {
        let c0 = unit_ball_radius(self.dim).expect("dim validated at construction");
        let n = n.max(3);
        c0 * self.volume(n).powf(1.0 / self.dim as f64) / (n as f64).ln().sqrt()
    }

    pub fn cutoff(&self, n: usize) -> f64 {
        table_lookup(&self.cutoffs, n)
    }
}

/// Any of the schedule families, as consumed by the solver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    Theoretical(TheoreticalSchedule),
    Practical(PracticalSchedule),
    Classical(ClassicalSchedule),
    Logarithmic(LogarithmicSchedule),
}

/// Where the cutoff for step `n` comes from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CutoffSource {
    /// Quantile of the objective values seen so far.
    RunningQuantile { quantile: f64, monotone: bool },
    /// Precomputed `f_n`.
    Table,
    /// No cutoff: every point is in the low-noise region.
    None,
}

impl Schedule {
    pub fn eta(&self, n: usize) -> f64 {
        match self {
            Schedule::Theoretical(s) => s.eta,
            Schedule::Practical(s) => s.eta,
            Schedule::Classical(s) => s.eta,
            Schedule::Logarithmic(s) => s.eta(n),
        }
    }

    /// Noise level inside the sublevel set at step `n`.
    pub fn sigma_low(&self, n: usize) -> f64 {
        match self {
            Schedule::Theoretical(s) => {
                theoretical_sigma(s, n.max(2)).expect("n >= 2 and validated schedule")
            }
            Schedule::Practical(s) => s.sigma_low(n),
            Schedule::Classical(s) => s.sigma(n),
            Schedule::Logarithmic(s) => s.sigma(n),
        }
    }

    /// Noise level outside the sublevel set, if the family defines one.
    pub fn sigma_high(&self) -> Option<f64> {
        match self {
            Schedule::Theoretical(s) => s.sigma_high,
            Schedule::Practical(s) => Some(s.sigma_high),
            Schedule::Classical(_) => None,
            Schedule::Logarithmic(s) => s.sigma_high,
        }
    }

    /// Whether a value equal to the cutoff counts as inside the low-noise
    /// region. The quantile rule puts ties in the high regime.
    pub fn ties_are_low(&self) -> bool {
        !matches!(self, Schedule::Practical(_))
    }

    pub fn is_low(&self, f_value: f64, cutoff: f64) -> bool {
        if self.ties_are_low() {
            f_value <= cutoff
        } else {
            f_value < cutoff
        }
    }

    pub fn cutoff_source(&self) -> CutoffSource {
        match self {
            Schedule::Practical(s) => CutoffSource::RunningQuantile {
                quantile: s.quantile,
                monotone: s.monotone,
            },
            Schedule::Theoretical(_) | Schedule::Logarithmic(_) => CutoffSource::Table,
            Schedule::Classical(_) => CutoffSource::None,
        }
    }

    /// Table cutoff for step `n`; infinite for families without a table.
    pub fn table_cutoff(&self, n: usize) -> f64 {
        match self {
            Schedule::Theoretical(s) => s.cutoff(n),
            Schedule::Logarithmic(s) => s.cutoff(n),
            _ => f64::INFINITY,
        }
    }
}

/// Index of the lower-interpolated `q`-quantile in a sorted sample of `len`.
pub fn quantile_index(len: usize, q: f64) -> usize {
    debug_assert!(len > 0);
    ((q * (len - 1) as f64).floor() as usize).min(len - 1)
}

/// The `q`-quantile of `history` (lower interpolation), clamped so it never
/// exceeds `previous_cutoff`.
pub fn update_cutoff(history: &[f64], q: f64, previous_cutoff: Option<f64>) -> Result<f64> {
    if history.is_empty() {
        return Err(Error::invalid("cutoff needs a non-empty history"));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::invalid(format!("quantile must lie in (0, 1), got {q}")));
    }
    let mut sorted = history.to_vec();
    sorted.sort_by(f64::total_cmp);
    let value = sorted[quantile_index(sorted.len(), q)];
    Ok(match previous_cutoff {
        Some(prev) => value.min(prev),
        None => value,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Ord64(f64);

impl Eq for Ord64 {}

impl PartialOrd for Ord64 {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ord64 {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Incremental running quantile of a growing history.
///
/// Keeps the `k + 1` smallest values in a max-heap and the rest in a min-heap,
/// where `k = floor(q (len - 1))`, so each push costs `O(log n)`.
#[derive(Clone, Debug)]
pub struct CutoffTracker {
    quantile: f64,
    monotone: bool,
    lower: BinaryHeap<Ord64>,
    upper: BinaryHeap<Reverse<Ord64>>,
    current: Option<f64>,
}

impl CutoffTracker {
    pub fn new(quantile: f64, monotone: bool) -> Result<Self> {
        if !(quantile > 0.0 && quantile < 1.0) {
            return Err(Error::invalid(format!(
                "quantile must lie in (0, 1), got {quantile}"
            )));
        }
        Ok(CutoffTracker {
            quantile,
            monotone,
            lower: BinaryHeap::new(),
            upper: BinaryHeap::new(),
            current: None,
        })
    }

    pub fn len(&self) -> usize {
        self.lower.len() + self.upper.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Adds a value and returns the updated cutoff.
    pub fn push(&mut self, v: f64) -> f64 {
        let v = Ord64(v);
        match self.lower.peek() {
            Some(top) if v > *top => self.upper.push(Reverse(v)),
            _ => self.lower.push(v),
        }
        let target = quantile_index(self.len(), self.quantile) + 1;
        while self.lower.len() > target {
            let moved = self.lower.pop().expect("non-empty");
            self.upper.push(Reverse(moved));
        }
        while self.lower.len() < target {
            let Reverse(moved) = self.upper.pop().expect("non-empty");
            self.lower.push(moved);
        }
        let q = self.lower.peek().expect("non-empty").0;
        let cut = match (self.monotone, self.current) {
            (true, Some(prev)) => q.min(prev),
            _ => q,
        };
        self.current = Some(cut);
        cut
    }

    pub fn current(&self) -> Option<f64> {
        self.current
    }
}
