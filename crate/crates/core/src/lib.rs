//! Goal-oriented stochastic optimal control.
//!
//! The crate contrasts the goal-oriented objective, a discounted sum of
//! next-state densities evaluated at the goal, with classical quadratic
//! objectives. It provides the environments, a particle-filter belief,
//! the stage rewards, a small neural-network stack with Adam and SOAP,
//! a differentiable predictive control trainer, a particle actor-critic and
//! the Monte-Carlo and dynamic-programming verification routines.

pub mod analysis;
pub mod belief;
pub mod dpc;
pub mod env;
pub mod error;
pub mod linalg;
pub mod nnopt;
pub mod reward;
pub mod rl;
pub mod rng;

pub use error::{Error, Result};
