//! Small numerical helpers shared across modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::Rng;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Multivariate normal with a possibly singular covariance.
///
/// Sampling works for any PSD covariance. The density is available only
/// when the covariance is positive definite.
#[derive(Debug, Clone)]
pub struct Gaussian {
    cov: DMatrix<f64>,
    factor: DMatrix<f64>,
    precision: Option<DMatrix<f64>>,
    log_norm: Option<f64>,
}

impl Gaussian {
    pub fn new(cov: DMatrix<f64>) -> Result<Self> {
        if !cov.is_square() {
            return Err(Error::InvalidModel("covariance must be square".into()));
        }
        let n = cov.nrows();
        let scale = cov.amax().max(1.0);
        if (&cov - cov.transpose()).amax() > 1e-10 * scale {
            return Err(Error::InvalidModel("covariance must be symmetric".into()));
        }
        if cov.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("covariance must be finite".into()));
        }
        if let Some(chol) = cov.clone().cholesky() {
            let l = chol.l();
            let log_det = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
            let precision = chol.inverse();
            return Ok(Self {
                cov,
                factor: l,
                precision: Some(precision),
                log_norm: Some(-0.5 * (n as f64 * LN_2PI + log_det)),
            });
        }
        let eig = SymmetricEigen::new(cov.clone());
        if eig.eigenvalues.iter().any(|&v| v < -1e-10 * scale) {
            return Err(Error::InvalidModel(
                "covariance must be positive semidefinite".into(),
            ));
        }
        let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
        let factor = &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals);
        Ok(Self {
            cov,
            factor,
            precision: None,
            log_norm: None,
        })
    }

    pub fn isotropic(dim: usize, variance: f64) -> Result<Self> {
        Self::new(DMatrix::from_diagonal_element(dim, dim, variance))
    }

    pub fn dim(&self) -> usize {
        self.cov.nrows()
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn is_degenerate(&self) -> bool {
        self.precision.is_none()
    }

    /// Zero-mean draw.
    pub fn sample_noise(&self, rng: &mut Rng) -> DVector<f64> {
        if self.factor.iter().all(|&v| v == 0.0) {
            return DVector::zeros(self.dim());
        }
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.factor * z
    }

    /// Log density of a zero-mean residual.
    pub fn log_density(&self, residual: &DVector<f64>) -> Option<f64> {
        let p = self.precision.as_ref()?;
        Some(self.log_norm? - 0.5 * residual.dot(&(p * residual)))
    }

    /// Log of the density's maximum.
    pub fn log_peak(&self) -> Option<f64> {
        self.log_norm
    }
}

/// Nodes and weights for `E[f(Z)]`, `Z ~ N(0, 1)`, by Golub–Welsch.
pub fn gauss_hermite(order: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(order >= 1, "quadrature order must be positive");
    let mut jacobi = DMatrix::<f64>::zeros(order, order);
    for k in 1..order {
        let off = (k as f64 / 2.0).sqrt();
        jacobi[(k, k - 1)] = off;
        jacobi[(k - 1, k)] = off;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..order)
        .map(|k| {
            let v0 = eig.eigenvectors[(0, k)];
            (eig.eigenvalues[k] * std::f64::consts::SQRT_2, v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    let nodes = pairs.iter().map(|p| p.0).collect();
    let weights = pairs.iter().map(|p| p.1 / total).collect();
    (nodes, weights)
}

/// Uniform 1-D grid.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformGrid {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl UniformGrid {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n < 2 || !(hi > lo) {
            return Err(Error::InvalidArgument(format!(
                "grid needs n >= 2 and hi > lo (got n={n}, [{lo}, {hi}])"
            )));
        }
        Ok(Self { lo, hi, n })
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.hi
        } else {
            self.lo + i as f64 * self.step()
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.point(i)).collect()
    }

    /// Lower cell index and fractional offset, clamped to the grid.
    pub fn locate(&self, x: f64) -> (usize, f64) {
        if x <= self.lo {
            return (0, 0.0);
        }
        if x >= self.hi {
            return (self.n - 2, 1.0);
        }
        let s = (x - self.lo) / self.step();
        let i = (s.floor() as usize).min(self.n - 2);
        (i, s - i as f64)
    }

    pub fn interp(&self, values: &[f64], x: f64) -> f64 {
        let (i, f) = self.locate(x);
        values[i] * (1.0 - f) + values[i + 1] * f
    }
}
