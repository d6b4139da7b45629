use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::dp::{grid_value_iteration, GridSpec, ValueTable};
use super::oracles::dlqr;
use super::rollout::{discounted_returns, goal_density, mean_and_stderr, LinearPolicy, Policy, PolicyEvaluation};
use super::trajectory::check_discount;
use crate::env::{ActionVector, EnvModel, LinearGaussian, StateVector};
use crate::error::Result;
use crate::reward::{RewardSpec, RewardVariant};
use crate::rng::substream;

/// Scalar system `x' = a x + b u + ω` on which the grid-DP goal-oriented
/// policy is compared with a discounted LQR policy under the goal objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Corollary1Config {
    pub a: f64,
    pub b: f64,
    pub process_var: f64,
    pub initial_mean: f64,
    pub initial_var: f64,
    pub gamma: f64,
    /// LQR state and action weights.
    pub lqr_q: f64,
    pub lqr_r: f64,
    pub rollouts: usize,
    pub horizon: usize,
    pub range_sigmas: f64,
    pub state_points: usize,
    pub action_points: usize,
    pub quadrature_order: usize,
}

impl Default for Corollary1Config {
    fn default() -> Self {
        Self {
            a: 1.05,
            b: 1.0,
            process_var: 1.0,
            initial_mean: 0.0,
            initial_var: 1.0,
            gamma: 0.95,
            lqr_q: 1.0,
            lqr_r: 1.0,
            rollouts: 2000,
            horizon: 200,
            range_sigmas: 5.0,
            state_points: 201,
            action_points: 401,
            quadrature_order: 16,
        }
    }
}

impl Corollary1Config {
    pub fn model(&self) -> Result<LinearGaussian> {
        LinearGaussian::scalar(self.a, self.b, self.process_var, 1.0, 1.0)?.with_initial(
            DVector::from_element(1, self.initial_mean),
            DMatrix::from_element(1, 1, self.initial_var),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corollary1Report {
    pub dp: PolicyEvaluation,
    pub lqr: PolicyEvaluation,
    pub lqr_gain: f64,
    /// Mean paired difference `J(dp) − J(lqr)` over common rollouts.
    pub gap: f64,
    pub gap_stderr: f64,
    pub dp_iterations: usize,
    pub seed: u64,
}

impl Corollary1Report {
    pub const CSV_HEADER: &'static str =
        "seed,dp_value,dp_stderr,lqr_value,lqr_stderr,lqr_gain,gap,gap_stderr,samples,horizon,holds";

    /// The DP policy wins by more than three standard errors of the gap.
    pub fn holds(&self) -> bool {
        self.gap > 3.0 * self.gap_stderr
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{},{},{}",
            self.seed,
            self.dp.estimate,
            self.dp.stderr,
            self.lqr.estimate,
            self.lqr.stderr,
            self.lqr_gain,
            self.gap,
            self.gap_stderr,
            self.dp.samples,
            self.dp.horizon,
            self.holds()
        )
    }
}

pub fn corollary1_study(cfg: &Corollary1Config, seed: u64) -> Result<(Corollary1Report, ValueTable)> {
    check_discount(cfg.gamma)?;
    let model = cfg.model()?;
    let mut spec = GridSpec::for_model(&model, cfg.range_sigmas, cfg.state_points, cfg.action_points)?;
    spec.quadrature_order = cfg.quadrature_order;
    let reward = RewardSpec::new(RewardVariant::GoalDensity, DVector::zeros(1), None)?;
    let table = grid_value_iteration(&model, &reward, cfg.gamma, &spec)?;

    let gain = dlqr(
        &model.a,
        &model.b,
        &DMatrix::from_element(1, 1, cfg.lqr_q),
        &DMatrix::from_element(1, 1, cfg.lqr_r),
        cfg.gamma,
    )?;
    let lqr = LinearPolicy::new(gain.clone());

    let env = EnvModel::LinearGaussian(model);
    let r = |x: &StateVector, u: &ActionVector, _: &StateVector| goal_density(&env, x, u);
    let returns = |policy: &dyn Policy| {
        let mut rng = substream(seed, "rollouts");
        discounted_returns(policy, &env, &r, cfg.gamma, cfg.rollouts, cfg.horizon, &mut rng)
    };
    let dp_returns = returns(&table)?;
    let lqr_returns = returns(&lqr)?;
    let diffs: Vec<f64> = dp_returns.iter().zip(&lqr_returns).map(|(a, b)| a - b).collect();
    let (gap, gap_stderr) = mean_and_stderr(&diffs);
    let tail = env
        .transition_density_bound()
        .map(|r_max| r_max * cfg.gamma.powi(cfg.horizon as i32) / (1.0 - cfg.gamma));
    let report = Corollary1Report {
        dp: PolicyEvaluation::from_returns(&dp_returns, cfg.horizon, tail),
        lqr: PolicyEvaluation::from_returns(&lqr_returns, cfg.horizon, tail),
        lqr_gain: gain[(0, 0)],
        gap,
        gap_stderr,
        dp_iterations: table.iterations,
        seed,
    };
    Ok((report, table))
}
