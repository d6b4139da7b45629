use nalgebra::{DMatrix, DVector};

use super::ActionBounds;
use crate::error::{Error, Result};
use crate::linalg::Gaussian;
use crate::rng::Rng;

/// `x' = A x + B u + ω`, `y = C x + ν` with Gaussian `ω`, `ν` and a Gaussian
/// (possibly point-mass) initial state.
#[derive(Debug, Clone)]
pub struct LinearGaussian {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    process: Gaussian,
    measurement: Gaussian,
    pub init_mean: DVector<f64>,
    init: Gaussian,
    pub bounds: ActionBounds,
}

impl LinearGaussian {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        process_cov: DMatrix<f64>,
        c: DMatrix<f64>,
        measurement_cov: DMatrix<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        let m = b.ncols();
        let k = c.nrows();
        let check = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidModel(format!("linear-Gaussian: {what}")))
            }
        };
        check(a.is_square(), "A must be square")?;
        check(b.nrows() == n, "B must have n rows")?;
        check(c.ncols() == n, "C must have n columns")?;
        check(process_cov.shape() == (n, n), "process covariance must be n x n")?;
        check(
            measurement_cov.shape() == (k, k),
            "measurement covariance must be k x k",
        )?;
        Ok(Self {
            a,
            b,
            c,
            process: Gaussian::new(process_cov)?,
            measurement: Gaussian::new(measurement_cov)?,
            init_mean: DVector::zeros(n),
            init: Gaussian::isotropic(n, 0.0)?,
            bounds: ActionBounds::unbounded(m),
        })
    }

    /// Scalar system `x' = a x + b u + ω`, `y = c x + ν`.
    pub fn scalar(a: f64, b: f64, process_var: f64, c: f64, measurement_var: f64) -> Result<Self> {
        let s = |v| DMatrix::from_element(1, 1, v);
        Self::new(s(a), s(b), s(process_var), s(c), s(measurement_var))
    }

    pub fn with_initial(mut self, mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if mean.len() != self.state_dim() {
            return Err(Error::ShapeMismatch {
                expected: self.state_dim(),
                got: mean.len(),
            });
        }
        self.init = Gaussian::new(cov)?;
        self.init_mean = mean;
        Ok(self)
    }

    pub fn with_bounds(mut self, bounds: ActionBounds) -> Result<Self> {
        if bounds.dim() != self.action_dim() {
            return Err(Error::ShapeMismatch {
                expected: self.action_dim(),
                got: bounds.dim(),
            });
        }
        self.bounds = bounds;
        Ok(self)
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn action_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn obs_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn process(&self) -> &Gaussian {
        &self.process
    }

    pub fn measurement(&self) -> &Gaussian {
        &self.measurement
    }

    pub fn initial(&self) -> &Gaussian {
        &self.init
    }

    pub fn mean_next(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u
    }

    pub fn sample_initial(&self, rng: &mut Rng) -> DVector<f64> {
        &self.init_mean + self.init.sample_noise(rng)
    }

    pub fn transition(&self, x: &DVector<f64>, u: &DVector<f64>, rng: &mut Rng) -> DVector<f64> {
        self.mean_next(x, u) + self.process.sample_noise(rng)
    }

    pub fn measure(&self, x: &DVector<f64>, rng: &mut Rng) -> DVector<f64> {
        &self.c * x + self.measurement.sample_noise(rng)
    }

    pub fn transition_logpdf(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        x_next: &DVector<f64>,
    ) -> Result<f64> {
        self.process
            .log_density(&(x_next - self.mean_next(x, u)))
            .ok_or(Error::DensityUnavailable("degenerate linear-Gaussian"))
    }

    pub fn measurement_logpdf(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        self.measurement
            .log_density(&(y - &self.c * x))
            .ok_or(Error::DensityUnavailable("noiseless measurement"))
    }
}
