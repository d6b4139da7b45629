//! Stage rewards, all expressed as quantities to maximize.
//!
//! Quadratic costs are stored negated. For the double pendulum every
//! state-based variant acts on `[1 - cos θ1, 1 - cos θ2]` in place of
//! `x - x_g`, which vanishes in the upright position. Elsewhere the
//! residual is `x - x_g`, optionally restricted to a subset of coordinates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::analysis::Trajectory;
use crate::belief::ParticleBelief;
use crate::env::{ActionVector, EnvModel, Observation, ScenarioParams, StateVector};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub enum RewardVariant {
    Quadratic { m: DMatrix<f64>, r: DMatrix<f64> },
    GaussianShaped { m: DMatrix<f64> },
    GoalDensity,
    Indicator { epsilon: f64 },
    MeasurementConditioned { epsilon: f64, goal_dims: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardSpec {
    pub variant: RewardVariant,
    pub goal: StateVector,
    /// Coordinates entering the residual; `None` means all of them.
    pub dims: Option<Vec<usize>>,
}

fn check_symmetric(name: &str, m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() || m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("{name} must be a finite square matrix")));
    }
    let tol = 1e-10 * m.amax().max(1.0);
    if (m - m.transpose()).amax() > tol {
        return Err(Error::InvalidArgument(format!("{name} must be symmetric")));
    }
    Ok(())
}

fn check_spd(name: &str, m: &DMatrix<f64>) -> Result<()> {
    check_symmetric(name, m)?;
    if m.clone().cholesky().is_none() {
        return Err(Error::InvalidArgument(format!("{name} must be positive definite")));
    }
    Ok(())
}

fn check_psd(name: &str, m: &DMatrix<f64>) -> Result<()> {
    check_symmetric(name, m)?;
    let tol = 1e-12 * m.amax().max(1.0);
    if m.clone().symmetric_eigenvalues().iter().any(|&l| l < -tol) {
        return Err(Error::InvalidArgument(format!("{name} must be positive semidefinite")));
    }
    Ok(())
}

impl RewardSpec {
    pub fn new(variant: RewardVariant, goal: StateVector, dims: Option<Vec<usize>>) -> Result<Self> {
        match &variant {
            RewardVariant::Quadratic { m, r } => {
                check_spd("M", m)?;
                // A zero action penalty is the default for the CSTR comparison.
                check_psd("R", r)?;
            }
            RewardVariant::GaussianShaped { m } => check_spd("M", m)?,
            RewardVariant::GoalDensity => {}
            RewardVariant::Indicator { epsilon } => check_epsilon(*epsilon)?,
            RewardVariant::MeasurementConditioned { epsilon, goal_dims } => {
                check_epsilon(*epsilon)?;
                if goal_dims.is_empty() {
                    return Err(Error::InvalidArgument("goal_dims must not be empty".into()));
                }
                if let Some(&d) = goal_dims.iter().find(|&&d| d >= goal.len()) {
                    return Err(Error::InvalidArgument(format!("goal dimension {d} out of range")));
                }
            }
        }
        if let Some(d) = &dims {
            if let Some(&bad) = d.iter().find(|&&i| i >= goal.len()) {
                return Err(Error::InvalidArgument(format!("residual dimension {bad} out of range")));
            }
        }
        Ok(Self { variant, goal, dims })
    }

    pub fn gaussian_shaped(m: DMatrix<f64>, goal: StateVector) -> Result<Self> {
        Self::new(RewardVariant::GaussianShaped { m }, goal, None)
    }

    pub fn quadratic(m: DMatrix<f64>, r: DMatrix<f64>, goal: StateVector) -> Result<Self> {
        Self::new(RewardVariant::Quadratic { m, r }, goal, None)
    }

    pub fn is_measurement_conditioned(&self) -> bool {
        matches!(self.variant, RewardVariant::MeasurementConditioned { .. })
    }

    /// Residual the state-based variants act on.
    pub fn residual(&self, x: &StateVector, model: &EnvModel) -> DVector<f64> {
        if let EnvModel::DoublePendulum(_) = model {
            return DVector::from_vec(vec![1.0 - x[0].cos(), 1.0 - x[1].cos()]);
        }
        match &self.dims {
            Some(d) => DVector::from_iterator(d.len(), d.iter().map(|&i| x[i] - self.goal[i])),
            None => x - &self.goal,
        }
    }

    fn quad_form(m: &DMatrix<f64>, e: &DVector<f64>) -> Result<f64> {
        if m.nrows() != e.len() {
            return Err(Error::ShapeMismatch {
                expected: m.nrows(),
                got: e.len(),
            });
        }
        Ok(e.dot(&(m * e)))
    }

    /// Fully observed stage reward at state `x` under action `u`.
    pub fn stage_reward(&self, x: &StateVector, u: &ActionVector, model: &EnvModel) -> Result<f64> {
        match &self.variant {
            RewardVariant::Quadratic { m, r } => {
                let e = self.residual(x, model);
                let state = Self::quad_form(m, &e)?;
                let action = Self::quad_form(r, u)?;
                Ok(-0.5 * (state + action))
            }
            RewardVariant::GaussianShaped { m } => {
                let e = self.residual(x, model);
                Ok((-0.5 * Self::quad_form(m, &e)?).exp())
            }
            RewardVariant::Indicator { epsilon } => {
                let e = self.residual(x, model);
                Ok(if e.norm() < *epsilon { 1.0 } else { 0.0 })
            }
            RewardVariant::GoalDensity => model
                .transition_logpdf(x, u, ScenarioParams::IDENTITY, &self.goal)
                .map(f64::exp),
            RewardVariant::MeasurementConditioned { .. } => Err(Error::InvalidArgument(
                "measurement-conditioned rewards need a belief; use belief_reward".into(),
            )),
        }
    }

    /// Histogram density of the goal box under a belief:
    /// `Σ w_i 1{|x_i - x_g| < ε on goal_dims} / (2ε)^|goal_dims|`.
    pub fn goal_box_density(&self, b: &ParticleBelief) -> Result<f64> {
        let RewardVariant::MeasurementConditioned { epsilon, goal_dims } = &self.variant else {
            return Err(Error::InvalidArgument("goal box needs a measurement-conditioned spec".into()));
        };
        let mass: f64 = b
            .particles()
            .iter()
            .zip(b.weights())
            .filter(|(p, _)| goal_dims.iter().all(|&d| (p.state[d] - self.goal[d]).abs() < *epsilon))
            .map(|(_, w)| w)
            .sum();
        Ok(mass / (2.0 * epsilon).powi(goal_dims.len() as i32))
    }

    /// Predicts `b` under `u`, conditions on `y_next`, and returns the goal
    /// histogram density of the posterior together with the posterior.
    pub fn measurement_conditioned_reward(
        &self,
        b: &ParticleBelief,
        u: &ActionVector,
        y_next: &Observation,
        model: &EnvModel,
        rng: &mut Rng,
    ) -> Result<(f64, ParticleBelief)> {
        if !self.is_measurement_conditioned() {
            return Err(Error::InvalidArgument("spec is not measurement-conditioned".into()));
        }
        let posterior = b.predict(model, u, rng)?.update(model, y_next)?;
        Ok((self.goal_box_density(&posterior)?, posterior))
    }

    /// Posterior-expected stage reward `Σ w_i r(x_i, u)`.
    pub fn expected_reward(&self, b: &ParticleBelief, u: &ActionVector, model: &EnvModel) -> Result<f64> {
        if self.is_measurement_conditioned() {
            return self.goal_box_density(b);
        }
        let mut total = 0.0;
        for (p, w) in b.particles().iter().zip(b.weights()) {
            total += w * self.stage_reward(&p.state, u, model)?;
        }
        Ok(total)
    }

    /// Belief-level reward after acting with `u` and observing `y_next`.
    /// Returns the reward and the posterior belief.
    pub fn belief_reward(
        &self,
        b: &ParticleBelief,
        u: &ActionVector,
        y_next: &Observation,
        model: &EnvModel,
        rng: &mut Rng,
    ) -> Result<(f64, ParticleBelief)> {
        if self.is_measurement_conditioned() {
            return self.measurement_conditioned_reward(b, u, y_next, model, rng);
        }
        let posterior = b.predict(model, u, rng)?.update(model, y_next)?;
        let r = self.expected_reward(&posterior, u, model)?;
        Ok((r, posterior))
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")))
    }
}

/// `Σ_t exp(-(goal - x_t[dim])² / (2σ²))` over the true states.
pub fn time_near_goal(traj: &Trajectory, dim: usize, goal: f64, sigma: f64) -> f64 {
    traj.states
        .iter()
        .map(|x| {
            let d = goal - x[dim];
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .sum()
}

/// Serializable reward block of the experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum RewardConfig {
    Quadratic {
        /// Diagonal of M; a scalar broadcast when of length one.
        m: Vec<f64>,
        #[serde(default)]
        r: Vec<f64>,
        goal: Vec<f64>,
        #[serde(default)]
        dims: Option<Vec<usize>>,
    },
    GaussianShaped {
        m: Vec<f64>,
        goal: Vec<f64>,
        #[serde(default)]
        dims: Option<Vec<usize>>,
    },
    GoalDensity {
        goal: Vec<f64>,
    },
    Indicator {
        epsilon: f64,
        goal: Vec<f64>,
    },
    MeasurementConditioned {
        epsilon: f64,
        goal: Vec<f64>,
        goal_dims: Vec<usize>,
    },
}

fn diagonal(values: &[f64], n: usize) -> Result<DMatrix<f64>> {
    match values.len() {
        0 => Ok(DMatrix::zeros(n, n)),
        1 => Ok(DMatrix::from_diagonal_element(n, n, values[0])),
        k if k == n => Ok(DMatrix::from_diagonal(&DVector::from_row_slice(values))),
        k => Err(Error::ShapeMismatch { expected: n, got: k }),
    }
}

impl RewardConfig {
    /// Builds the spec; `residual_dim` and `action_dim` size the matrices.
    pub fn build(&self, residual_dim: usize, action_dim: usize) -> Result<RewardSpec> {
        let goal_vec = |g: &[f64]| DVector::from_row_slice(g);
        match self {
            RewardConfig::Quadratic { m, r, goal, dims } => {
                let n = dims.as_ref().map_or(residual_dim, Vec::len);
                RewardSpec::new(
                    RewardVariant::Quadratic {
                        m: diagonal(m, n)?,
                        r: diagonal(r, action_dim)?,
                    },
                    goal_vec(goal),
                    dims.clone(),
                )
            }
            RewardConfig::GaussianShaped { m, goal, dims } => {
                let n = dims.as_ref().map_or(residual_dim, Vec::len);
                RewardSpec::new(
                    RewardVariant::GaussianShaped { m: diagonal(m, n)? },
                    goal_vec(goal),
                    dims.clone(),
                )
            }
            RewardConfig::GoalDensity { goal } => {
                RewardSpec::new(RewardVariant::GoalDensity, goal_vec(goal), None)
            }
            RewardConfig::Indicator { epsilon, goal } => RewardSpec::new(
                RewardVariant::Indicator { epsilon: *epsilon },
                goal_vec(goal),
                None,
            ),
            RewardConfig::MeasurementConditioned {
                epsilon,
                goal,
                goal_dims,
            } => RewardSpec::new(
                RewardVariant::MeasurementConditioned {
                    epsilon: *epsilon,
                    goal_dims: goal_dims.clone(),
                },
                goal_vec(goal),
                None,
            ),
        }
    }
}

#[cfg(test)]
mod tests;
