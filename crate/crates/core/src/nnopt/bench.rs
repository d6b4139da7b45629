//! Ill-conditioned quadratic used to compare optimizers.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

use super::{Mlp, Optimizer};
use crate::rng::seeded;

/// `f(W) = ½ tr(Wᵀ H_L W H_R)` with SPD `H_L`, `H_R` whose eigenbases are
/// random rotations. The Hessian `H_R ⊗ H_L` has eigenvalues spread
/// log-uniformly over `[1, condition]`, split evenly between the factors.
#[derive(Debug, Clone)]
pub struct KroneckerQuadratic {
    pub left: DMatrix<f64>,
    pub right: DMatrix<f64>,
}

impl KroneckerQuadratic {
    pub fn rotated(rows: usize, cols: usize, condition: f64, seed: u64) -> Self {
        let half = condition.sqrt().log10();
        let spectrum = |n: usize, rising: bool| {
            DVector::from_fn(n, |i, _| {
                let k = if rising { i } else { n - 1 - i };
                10f64.powf(half * k as f64 / (n - 1).max(1) as f64)
            })
        };
        let mut rng = seeded(seed);
        let mut rotation = |n: usize| DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0)).qr().q();
        let (u, v) = (rotation(rows), rotation(cols));
        let left = &u * DMatrix::from_diagonal(&spectrum(rows, true)) * u.transpose();
        let right = &v * DMatrix::from_diagonal(&spectrum(cols, false)) * v.transpose();
        Self { left, right }
    }

    pub fn loss_and_grad(&self, w: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
        let g = &self.left * w * &self.right;
        (0.5 * w.dot(&g), g)
    }

    /// Optimizer steps until the loss drops below `target`, starting from a
    /// uniform random `W`; `None` if `cap` steps do not suffice.
    pub fn iterations_to(&self, mut opt: Optimizer, target: f64, cap: usize, init_seed: u64) -> Option<usize> {
        let (rows, cols) = (self.left.nrows(), self.right.nrows());
        let mut rng = seeded(init_seed);
        let mut net = Mlp::zeros(&[cols, rows]).expect("positive sizes");
        net.layers[0].w = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0));
        let mut grads = net.zeros_like();
        for k in 0..cap {
            let (loss, g) = self.loss_and_grad(&net.layers[0].w);
            if loss < target {
                return Some(k);
            }
            grads.layers[0].w = g;
            opt.step(&mut net, &grads).expect("matching shapes");
        }
        None
    }
}
