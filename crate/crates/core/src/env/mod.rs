//! Simulated uncertain dynamical systems `x' = f(x, u, ω)`, `y = g(x, ν)`.

mod cstr;
mod linear;
mod pendulum;
pub mod scalar;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use cstr::{Cstr, CstrAction, CstrConstants, CstrInitial, CstrMeasurement, CstrParams, CstrPrior};
pub use linear::LinearGaussian;
pub use pendulum::{DoublePendulum, PendulumParams};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub type StateVector = DVector<f64>;
pub type ActionVector = DVector<f64>;
pub type Observation = DVector<f64>;

/// Scenario multipliers `ψ = {α, β}` on the CSTR kinetics. Other kinds use
/// the identity scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioParams {
    pub alpha: f64,
    pub beta: f64,
}

impl ScenarioParams {
    pub const IDENTITY: Self = Self {
        alpha: 1.0,
        beta: 1.0,
    };
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self::IDENTITY
    }
}

/// Per-dimension closed action interval.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionBounds {
    pub low: DVector<f64>,
    pub high: DVector<f64>,
}

impl ActionBounds {
    pub fn new(low: DVector<f64>, high: DVector<f64>) -> Result<Self> {
        if low.len() != high.len() {
            return Err(Error::ShapeMismatch {
                expected: low.len(),
                got: high.len(),
            });
        }
        if low.iter().zip(high.iter()).any(|(l, h)| !(l <= h)) {
            return Err(Error::InvalidModel("action bounds need low <= high".into()));
        }
        Ok(Self { low, high })
    }

    pub fn symmetric(dim: usize, limit: f64) -> Self {
        Self {
            low: DVector::from_element(dim, -limit),
            high: DVector::from_element(dim, limit),
        }
    }

    pub fn unbounded(dim: usize) -> Self {
        Self::symmetric(dim, f64::INFINITY)
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn is_finite(&self) -> bool {
        self.low.iter().chain(self.high.iter()).all(|v| v.is_finite())
    }

    pub fn clip(&self, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(u.len(), |i, _| u[i].clamp(self.low[i], self.high[i]))
    }

    pub fn contains(&self, u: &DVector<f64>) -> bool {
        u.len() == self.dim() && (0..u.len()).all(|i| u[i] >= self.low[i] && u[i] <= self.high[i])
    }

    /// Maps `z ∈ [-1, 1]^m` affinely onto the box.
    pub fn from_unit(&self, z: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(z.len(), |i, _| {
            self.low[i] + 0.5 * (z[i] + 1.0) * (self.high[i] - self.low[i])
        })
    }

    pub fn to_unit(&self, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(u.len(), |i, _| {
            2.0 * (u[i] - self.low[i]) / (self.high[i] - self.low[i]) - 1.0
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    LinearGaussian,
    Cstr,
    DoublePendulum,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::LinearGaussian => "linear_gaussian",
            EnvKind::Cstr => "cstr",
            EnvKind::DoublePendulum => "double_pendulum",
        }
    }
}

#[derive(Debug, Clone)]
pub enum EnvModel {
    LinearGaussian(LinearGaussian),
    Cstr(Cstr),
    DoublePendulum(DoublePendulum),
}

impl EnvModel {
    pub fn kind(&self) -> EnvKind {
        match self {
            EnvModel::LinearGaussian(_) => EnvKind::LinearGaussian,
            EnvModel::Cstr(_) => EnvKind::Cstr,
            EnvModel::DoublePendulum(_) => EnvKind::DoublePendulum,
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            EnvModel::LinearGaussian(m) => m.state_dim(),
            EnvModel::Cstr(_) => Cstr::STATE_DIM,
            EnvModel::DoublePendulum(_) => DoublePendulum::STATE_DIM,
        }
    }

    pub fn action_dim(&self) -> usize {
        self.bounds().dim()
    }

    pub fn obs_dim(&self) -> usize {
        match self {
            EnvModel::LinearGaussian(m) => m.obs_dim(),
            _ => self.state_dim(),
        }
    }

    pub fn bounds(&self) -> &ActionBounds {
        match self {
            EnvModel::LinearGaussian(m) => &m.bounds,
            EnvModel::Cstr(m) => &m.bounds,
            EnvModel::DoublePendulum(m) => &m.bounds,
        }
    }

    pub fn sample_psi(&self, rng: &mut Rng) -> ScenarioParams {
        match self {
            EnvModel::Cstr(m) => m.sample_psi(rng),
            _ => ScenarioParams::IDENTITY,
        }
    }

    pub fn nominal_psi(&self) -> ScenarioParams {
        match self {
            EnvModel::Cstr(m) => m.nominal_psi(),
            _ => ScenarioParams::IDENTITY,
        }
    }

    pub fn sample_initial_state(&self, rng: &mut Rng) -> StateVector {
        match self {
            EnvModel::LinearGaussian(m) => m.sample_initial(rng),
            EnvModel::Cstr(m) => m.sample_initial_state(rng),
            EnvModel::DoublePendulum(_) => DoublePendulum::rest_state(),
        }
    }

    /// `x_0 ~ p(x_0)` together with `ψ ~ p(ψ)`.
    pub fn sample_initial(&self, rng: &mut Rng) -> (StateVector, ScenarioParams) {
        let x = self.sample_initial_state(rng);
        let psi = self.sample_psi(rng);
        (x, psi)
    }

    /// Samples `x' = f(x, u, ω)`. Out-of-bounds actions are clipped.
    pub fn transition(
        &self,
        x: &StateVector,
        u: &ActionVector,
        psi: ScenarioParams,
        rng: &mut Rng,
    ) -> Result<StateVector> {
        self.check_action(u)?;
        let next = match self {
            EnvModel::LinearGaussian(m) => {
                let next = m.transition(x, &m.bounds.clip(u), rng);
                if next.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteState);
                }
                next
            }
            EnvModel::Cstr(m) => m.transition(x, u, psi)?,
            EnvModel::DoublePendulum(m) => m.transition(x, u)?,
        };
        Ok(next)
    }

    pub fn measure(&self, x: &StateVector, rng: &mut Rng) -> Observation {
        match self {
            EnvModel::LinearGaussian(m) => m.measure(x, rng),
            EnvModel::Cstr(m) => m.measure(x, rng),
            EnvModel::DoublePendulum(_) => x.clone(),
        }
    }

    /// `log p(x_next | x, u)`; only linear-Gaussian transitions have a density.
    pub fn transition_logpdf(
        &self,
        x: &StateVector,
        u: &ActionVector,
        _psi: ScenarioParams,
        x_next: &StateVector,
    ) -> Result<f64> {
        match self {
            EnvModel::LinearGaussian(m) => m.transition_logpdf(x, &m.bounds.clip(u), x_next),
            other => Err(Error::DensityUnavailable(other.kind().name())),
        }
    }

    /// Upper bound of the transition density, when it exists.
    pub fn transition_density_bound(&self) -> Option<f64> {
        match self {
            EnvModel::LinearGaussian(m) => m.process().log_peak().map(f64::exp),
            _ => None,
        }
    }

    /// `log p(y | x)`.
    pub fn measurement_logpdf(&self, x: &StateVector, y: &Observation) -> Result<f64> {
        match self {
            EnvModel::LinearGaussian(m) => m.measurement_logpdf(x, y),
            EnvModel::Cstr(m) => Ok(m.measurement_logpdf(x, y)),
            EnvModel::DoublePendulum(_) => Err(Error::DensityUnavailable("double_pendulum")),
        }
    }

    /// Deterministic (noise-free) step with exact Jacobians `∂x'/∂x`, `∂x'/∂u`.
    /// Actions are not clipped.
    pub fn step_with_jacobian(
        &self,
        x: &StateVector,
        u: &ActionVector,
    ) -> Result<(StateVector, DMatrix<f64>, DMatrix<f64>)> {
        match self {
            EnvModel::LinearGaussian(m) => Ok((m.mean_next(x, u), m.a.clone(), m.b.clone())),
            EnvModel::DoublePendulum(m) => m.step_with_jacobian(x, u),
            EnvModel::Cstr(_) => Err(Error::InvalidArgument(
                "differentiable steps are provided for linear-Gaussian and pendulum models".into(),
            )),
        }
    }

    fn check_action(&self, u: &ActionVector) -> Result<()> {
        if u.len() != self.action_dim() {
            return Err(Error::ShapeMismatch {
                expected: self.action_dim(),
                got: u.len(),
            });
        }
        Ok(())
    }

    pub fn from_config(cfg: &EnvConfig) -> Result<Self> {
        match cfg {
            EnvConfig::LinearGaussian(p) => Ok(EnvModel::LinearGaussian(p.build()?)),
            EnvConfig::Cstr(p) => Ok(EnvModel::Cstr(Cstr::new(p.clone())?)),
            EnvConfig::DoublePendulum(p) => {
                Ok(EnvModel::DoublePendulum(DoublePendulum::new(p.clone())?))
            }
        }
    }
}

/// Linear-Gaussian parameter file schema (`configs/env/linear_gaussian.toml`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearGaussianParams {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub process_cov: Vec<Vec<f64>>,
    pub measurement_cov: Vec<Vec<f64>>,
    #[serde(default)]
    pub initial_mean: Option<Vec<f64>>,
    #[serde(default)]
    pub initial_cov: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub action_low: Option<Vec<f64>>,
    #[serde(default)]
    pub action_high: Option<Vec<f64>>,
}

fn to_matrix(rows: &[Vec<f64>], name: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::InvalidModel(format!("{name} must be a non-empty rectangular matrix")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

impl LinearGaussianParams {
    pub fn build(&self) -> Result<LinearGaussian> {
        let mut m = LinearGaussian::new(
            to_matrix(&self.a, "a")?,
            to_matrix(&self.b, "b")?,
            to_matrix(&self.process_cov, "process_cov")?,
            to_matrix(&self.c, "c")?,
            to_matrix(&self.measurement_cov, "measurement_cov")?,
        )?;
        let n = m.state_dim();
        if self.initial_mean.is_some() || self.initial_cov.is_some() {
            let mean = self
                .initial_mean
                .clone()
                .map(DVector::from_vec)
                .unwrap_or_else(|| DVector::zeros(n));
            let cov = match &self.initial_cov {
                Some(rows) => to_matrix(rows, "initial_cov")?,
                None => DMatrix::zeros(n, n),
            };
            m = m.with_initial(mean, cov)?;
        }
        if let (Some(lo), Some(hi)) = (&self.action_low, &self.action_high) {
            m = m.with_bounds(ActionBounds::new(
                DVector::from_vec(lo.clone()),
                DVector::from_vec(hi.clone()),
            )?)?;
        }
        Ok(m)
    }
}

/// Environment parameter file: one of the three kinds, tagged by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvConfig {
    LinearGaussian(LinearGaussianParams),
    Cstr(CstrParams),
    DoublePendulum(PendulumParams),
}

impl EnvConfig {
    pub fn kind(&self) -> EnvKind {
        match self {
            EnvConfig::LinearGaussian(_) => EnvKind::LinearGaussian,
            EnvConfig::Cstr(_) => EnvKind::Cstr,
            EnvConfig::DoublePendulum(_) => EnvKind::DoublePendulum,
        }
    }
}

#[cfg(test)]
mod tests;
