use crate::env::{ActionVector, Observation, StateVector};
use crate::error::{Error, Result};

/// A recorded closed-loop rollout. `states` holds `x_0 .. x_{L-1}`;
/// `actions` and `rewards` may be shorter by one when the final state has
/// no decision attached.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<StateVector>,
    pub actions: Vec<ActionVector>,
    pub observations: Option<Vec<Observation>>,
    pub rewards: Vec<f64>,
    pub gamma: f64,
}

pub(crate) fn check_discount(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "discount must lie strictly inside (0, 1), got {gamma}"
        )))
    }
}

impl Trajectory {
    pub fn new(
        states: Vec<StateVector>,
        actions: Vec<ActionVector>,
        rewards: Vec<f64>,
        gamma: f64,
    ) -> Result<Self> {
        check_discount(gamma)?;
        let n = states.len();
        for (what, len) in [("actions", actions.len()), ("rewards", rewards.len())] {
            if len > n || (len + 1 < n && len != 0) {
                return Err(Error::InvalidArgument(format!(
                    "{what} has length {len}, incompatible with {n} states"
                )));
            }
        }
        Ok(Self {
            states,
            actions,
            observations: None,
            rewards,
            gamma,
        })
    }

    pub fn from_states(states: Vec<StateVector>, gamma: f64) -> Result<Self> {
        Self::new(states, Vec::new(), Vec::new(), gamma)
    }

    pub fn with_observations(mut self, observations: Vec<Observation>) -> Result<Self> {
        if observations.len() > self.states.len() {
            return Err(Error::ShapeMismatch {
                expected: self.states.len(),
                got: observations.len(),
            });
        }
        self.observations = Some(observations);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.states.iter().all(|x| x.iter().all(|v| v.is_finite()))
            && self.actions.iter().all(|u| u.iter().all(|v| v.is_finite()))
            && self.rewards.iter().all(|r| r.is_finite())
    }
}

/// Both objectives of the same (goal-shifted) state sequence:
/// `exp(-½ Σ γ^t ‖x_t‖²)` and `Σ γ^t exp(-½ ‖x_t‖²)`.
pub fn score_trajectory(traj: &Trajectory) -> Result<(f64, f64)> {
    if !traj.is_finite() {
        return Err(Error::NonFiniteState);
    }
    let mut discount = 1.0;
    let mut exponent = 0.0;
    let mut goal = 0.0;
    for x in &traj.states {
        let q = 0.5 * x.norm_squared();
        exponent += discount * q;
        goal += discount * (-q).exp();
        discount *= traj.gamma;
    }
    Ok(((-exponent).exp(), goal))
}

/// Weights `γ^t (1-γ) / (1-γ^n)`, `t = 0..n`, which sum to one.
pub fn discount_weights(gamma: f64, n: usize) -> Vec<f64> {
    let norm = (1.0 - gamma) / (1.0 - gamma.powi(n as i32));
    let mut w = Vec::with_capacity(n);
    let mut g = 1.0;
    for _ in 0..n {
        w.push(norm * g);
        g *= gamma;
    }
    w
}

/// `(Σ λ_i log p_i, log Σ λ_i p_i)` for convex weights `λ`, evaluated from
/// log-densities with a log-sum-exp on the right side.
pub fn jensen_sides(weights: &[f64], log_p: &[f64]) -> (f64, f64) {
    assert_eq!(weights.len(), log_p.len(), "one weight per density");
    let lhs: f64 = weights.iter().zip(log_p).map(|(w, l)| w * l).sum();
    let terms: Vec<f64> = weights
        .iter()
        .zip(log_p)
        .filter(|(w, _)| **w > 0.0)
        .map(|(w, l)| w.ln() + l)
        .collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let rhs = if max.is_finite() {
        max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
    } else {
        max
    };
    (lhs, rhs)
}

/// Jensen sides of one trajectory's per-step log-densities with
/// normalized discount weights.
pub fn trajectory_jensen(log_p: &[f64], gamma: f64) -> (f64, f64) {
    jensen_sides(&discount_weights(gamma, log_p.len()), log_p)
}
