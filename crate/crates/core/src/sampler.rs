//! Reproducible random streams.
//!
//! Every stream is a ChaCha8 generator keyed by a 64-bit master seed and
//! selected by a 64-bit stream index (ChaCha's native stream parameter), so any
//! number of independent streams can be derived without advancing another one.
//! Gaussian deviates come from `rand_distr::StandardNormal` (ziggurat); the
//! number of words consumed per deviate depends only on the stream contents.
//!
//! The generator family and the normal transform are part of the
//! reproducibility contract: changing either changes every recorded result.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::objective::{BoxDomain, Point};

/// A single-owner random stream identified by `(seed, stream)`.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RngStream { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Fills `out` with independent standard normal deviates.
    pub fn fill_gaussian(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.standard_normal();
        }
    }

    /// Fills `out` with a uniform draw from `domain`.
    pub fn fill_uniform_in_box(&mut self, domain: &BoxDomain, out: &mut [f64]) {
        debug_assert_eq!(out.len(), domain.dim());
        for (i, v) in out.iter_mut().enumerate() {
            let u = self.uniform();
            *v = domain.low()[i] + u * domain.width(i);
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// The stream used by run `run_index` of an experiment seeded with `master`.
pub fn derive_stream(master: u64, run_index: u64) -> RngStream {
    RngStream::new(master, run_index)
}

/// `d` independent standard normal deviates.
pub fn gaussian_vector(rng: &mut RngStream, d: usize) -> Point {
    assert!(d >= 1, "dimension must be at least 1");
    let mut v = vec![0.0; d];
    rng.fill_gaussian(&mut v);
    Point::from_raw(v)
}

/// A uniform draw from `domain`, independent across axes.
pub fn uniform_in_box(rng: &mut RngStream, domain: &BoxDomain) -> Point {
    let mut v = vec![0.0; domain.dim()];
    rng.fill_uniform_in_box(domain, &mut v);
    Point::from_raw(v)
}
