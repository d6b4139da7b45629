use nalgebra::{DMatrix, DVector};

use super::trajectory::check_discount;
use crate::env::{ActionVector, EnvModel, ScenarioParams, StateVector};
use crate::error::{Error, Result};
use crate::rng::{indexed, op_seed, Rng};

/// A deterministic state-feedback policy.
pub trait Policy {
    fn act(&self, x: &StateVector) -> ActionVector;
}

impl<F: Fn(&StateVector) -> ActionVector> Policy for F {
    fn act(&self, x: &StateVector) -> ActionVector {
        self(x)
    }
}

/// `u = −K x + offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPolicy {
    pub gain: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl LinearPolicy {
    pub fn new(gain: DMatrix<f64>) -> Self {
        let offset = DVector::zeros(gain.nrows());
        Self { gain, offset }
    }

    pub fn with_offset(mut self, offset: DVector<f64>) -> Self {
        self.offset = offset;
        self
    }
}

impl Policy for LinearPolicy {
    fn act(&self, x: &StateVector) -> ActionVector {
        -(&self.gain * x) + &self.offset
    }
}

/// Monte-Carlo estimate of a discounted objective.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyEvaluation {
    pub estimate: f64,
    pub stderr: f64,
    pub samples: usize,
    pub horizon: usize,
    /// Upper bound on the discarded tail `r_max γ^T / (1 − γ)`, when a
    /// reward bound is known.
    pub tail_bound: Option<f64>,
}

impl PolicyEvaluation {
    pub fn from_returns(returns: &[f64], horizon: usize, tail_bound: Option<f64>) -> Self {
        let (estimate, stderr) = mean_and_stderr(returns);
        Self {
            estimate,
            stderr,
            samples: returns.len(),
            horizon,
            tail_bound,
        }
    }
}

pub(crate) fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// One closed-loop rollout of `horizon` decisions from `x0`, calling
/// `visit(t, x_t, u_t, x_{t+1})` after each transition.
pub(crate) fn simulate(
    policy: &dyn Policy,
    model: &EnvModel,
    x0: StateVector,
    horizon: usize,
    rng: &mut Rng,
    mut visit: impl FnMut(usize, &StateVector, &ActionVector, &StateVector) -> Result<()>,
) -> Result<()> {
    let mut x = x0;
    for t in 0..horizon {
        let u = policy.act(&x);
        let next = model.transition(&x, &u, ScenarioParams::IDENTITY, rng)?;
        visit(t, &x, &u, &next)?;
        x = next;
    }
    Ok(())
}

/// Discounted returns `Σ_{t<T} γ^t r(x_t, u_t, x_{t+1})` of `n` rollouts.
///
/// Rollout `i` draws from its own indexed stream, so two policies evaluated
/// from identically seeded `rng`s see the same initial states and noise.
pub fn discounted_returns(
    policy: &dyn Policy,
    model: &EnvModel,
    reward: &dyn Fn(&StateVector, &ActionVector, &StateVector) -> Result<f64>,
    gamma: f64,
    n: usize,
    horizon: usize,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidArgument(format!("discount must lie in [0, 1), got {gamma}")));
    }
    let seed = op_seed(rng);
    (0..n)
        .map(|i| {
            let mut r = indexed(seed, i as u64);
            let x0 = model.sample_initial_state(&mut r);
            let mut total = 0.0;
            let mut discount = 1.0;
            simulate(policy, model, x0, horizon, &mut r, |_, x, u, next| {
                total += discount * reward(x, u, next)?;
                discount *= gamma;
                Ok(())
            })?;
            Ok(total)
        })
        .collect()
}

/// Goal density at the origin, `p(x_{t+1} = 0 | x_t, u_t)`.
pub fn goal_density(model: &EnvModel, x: &StateVector, u: &ActionVector) -> Result<f64> {
    let goal = DVector::zeros(model.state_dim());
    Ok(model
        .transition_logpdf(x, u, ScenarioParams::IDENTITY, &goal)?
        .exp())
}

/// Goal-oriented objective `E Σ_{t<T} γ^t p(x_{t+1} = 0 | x_t, u_t)`.
pub fn policy_eval_goal_objective(
    policy: &dyn Policy,
    model: &EnvModel,
    gamma: f64,
    n: usize,
    horizon: usize,
    rng: &mut Rng,
) -> Result<PolicyEvaluation> {
    check_discount(gamma)?;
    let reward = |x: &StateVector, u: &ActionVector, _: &StateVector| goal_density(model, x, u);
    let returns = discounted_returns(policy, model, &reward, gamma, n, horizon, rng)?;
    let tail = model
        .transition_density_bound()
        .map(|r_max| r_max * gamma.powi(horizon as i32) / (1.0 - gamma));
    Ok(PolicyEvaluation::from_returns(&returns, horizon, tail))
}
