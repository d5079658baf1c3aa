//! Event-driven Monte Carlo simulation of continuum growth on `R^d`.
//!
//! The crate models the one-type and two-type continuum Richardson processes:
//! an infected region grows by outbursts, each outburst infecting the
//! previously uninfected part of a ball of random radius around a uniformly
//! chosen point of the (type-specific) infected region. Alongside the growth
//! engines it provides the branching-random-walk dominating process, the
//! coupled constructions used to compare processes pathwise, and estimators
//! for time constants, asymptotic shape and coexistence proxies.
//!
//! Module map:
//!
//! * [`geometry`]: points, balls, cubes, grid-indexed ball sets and the
//!   ε-net coverage test.
//! * [`stochastics`]: seeded random streams, radius laws and space-time
//!   Poisson event generation by thinning.
//! * [`process`]: the growth engines and the first-cover region representation.
//! * [`brw`]: the branching random walk, its rightmost extent and Laplace
//!   transform machinery.
//! * [`couplings`]: coupled constructions with pathwise certificates.
//! * [`estimators`]: hitting times, time constants, shape deviation,
//!   effective-outburst counts and coexistence proxies.
//! * [`cli`]: flat key-value experiment configs and experiment orchestration.

pub mod brw;
pub mod cli;
pub mod couplings;
mod error;
pub mod estimators;
pub mod geometry;
pub mod process;
pub mod stats;
pub mod stochastics;

pub use error::{Error, Result};
