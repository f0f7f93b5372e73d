//! Stochastic gradient descent with adaptive, state-dependent noise for
//! nonconvex global optimization.
//!
//! The noise level at each step depends on whether the current objective value
//! lies below a cutoff: below it the iterate takes a low-noise gradient step,
//! above it a high-noise step (or a uniform restart) that keeps exploring.
//! Cutoffs come either from a running quantile of past values or from a table
//! built by sublevel-set volume estimation.
//!
//! ```
//! use adavar::objective::{BoxDomain, Rastrigin, RastriginParams};
//! use adavar::schedule::{PracticalSchedule, Schedule};
//! use adavar::{run, RngStream, SolverConfig, Variant};
//! use std::sync::Arc;
//!
//! # fn main() -> adavar::Result<()> {
//! let obj = Arc::new(Rastrigin::new(RastriginParams::new(1.0, 1.0, 0.05, 2)?)?);
//! let schedule = Schedule::Practical(PracticalSchedule::new(1.0, 20.0, 1.0, 0.5, 1.0)?);
//! let cfg = SolverConfig::new(Variant::TwoStage, obj, BoxDomain::cube(2, -20.0, 20.0)?, schedule, 5000);
//! let trace = run(cfg, RngStream::new(42, 0))?;
//! assert_eq!(trace.len(), 5001);
//! println!("best f = {}", trace.best.f_value);
//! # Ok(())
//! # }
//! ```

pub mod cli;
pub mod config;
pub mod error;
pub mod estimation;
pub mod experiments;
pub mod objective;
pub mod sampler;
pub mod schedule;
pub mod solver;

pub use error::{Error, Result};
pub use objective::{BoxDomain, Objective, Point, Rastrigin, RastriginParams, StochasticObjective};
pub use sampler::RngStream;
pub use schedule::Schedule;
pub use solver::{run, RunTrace, Solver, SolverConfig, Variant};
