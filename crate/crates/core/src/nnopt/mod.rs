//! Dense networks, reverse-mode gradients and the Adam and SOAP optimizers.

pub mod bench;
pub mod checkpoint;
mod mlp;
mod optim;

pub use mlp::{GradTape, Layer, Mlp};
pub use optim::{Adam, AdamParams, Optimizer, OptimizerConfig, OptimizerKind, Soap};

/// Relative error with an absolute floor, for comparing gradients that
/// may legitimately be zero.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}
