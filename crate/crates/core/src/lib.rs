//! Small-deviation probabilities for Gaussian processes.
//!
//! The crate builds the processes (Loud-function families, independent
//! sequences, ultrametric tree processes), their intrinsic metrics and
//! covering numbers, and evaluates small-ball probabilities three ways:
//! Monte Carlo on grids, certified infinite products in log space, and
//! majorizing-measure chaining bounds.
//!
//! Monte Carlo kernels are data-parallel over sample paths when the
//! `parallel` feature is enabled (the default). Every path draws from its own
//! counter-based substream, so results do not depend on the worker count.

pub mod chaining;
pub mod covernum;
pub mod error;
pub mod exec;
pub mod gaussmath;
pub mod loud;
pub mod procs;
pub mod smallball;
pub mod ultra;

pub use error::{Error, Result};
pub use exec::Execution;
pub use gaussmath::SeedSpec;
