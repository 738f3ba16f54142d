//! Numerical laboratory for constant-stepsize stochastic approximation
//! tracking a slowly drifting target.
//!
//! The crate simulates the tracking iteration, computes the exact
//! variation-of-constants decomposition of the tracking error, evaluates the
//! analytic bound constants, and checks the resulting all-time error bounds
//! against Monte Carlo estimates at desk scale.

pub mod bounds;
pub mod concentration;
pub mod config;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod noise;
pub mod simulate;
pub mod stability;
pub mod svg;
pub mod variational;

pub use error::{Error, Result};
