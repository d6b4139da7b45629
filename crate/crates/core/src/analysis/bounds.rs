use std::fmt;

use nalgebra::{DMatrix, DVector};

use super::rollout::{mean_and_stderr, simulate, Policy};
use super::trajectory::{check_discount, discount_weights, jensen_sides};
use crate::env::{EnvModel, ScenarioParams, StateVector};
use crate::error::{Error, Result};
use crate::rng::{indexed, op_seed, Rng};

/// Monte-Carlo comparison of the two sides of a Jensen-type bound
/// `lhs ≤ rhs`.
///
/// Both sides use the normalized discount weights `γ^t (1−γ)/(1−γ^T)`, so
/// every individual trajectory satisfies its own inequality exactly and
/// `min_trajectory_slack` should never fall below rounding level.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub lhs: f64,
    pub rhs: f64,
    pub lhs_stderr: f64,
    pub rhs_stderr: f64,
    pub samples: usize,
    pub horizon: usize,
    pub gamma: f64,
    /// Bound on the per-step density or reward that the tail uses.
    pub density_bound: Option<f64>,
    /// `r_max γ^T / (1 − γ)`, added to the acceptance tolerance.
    pub tail_bound: f64,
    /// Smallest per-trajectory `rhs_i − lhs_i`.
    pub min_trajectory_slack: f64,
    pub holds: bool,
    /// `rhs − lhs`.
    pub gap: f64,
}

impl BoundReport {
    pub const CSV_HEADER: &'static str = "lhs,rhs,lhs_stderr,rhs_stderr,samples,horizon,gamma,density_bound,tail_bound,min_trajectory_slack,holds,gap";

    fn from_sides(
        lhs_i: &[f64],
        log_a_i: &[f64],
        slacks: &[f64],
        horizon: usize,
        gamma: f64,
        density_bound: Option<f64>,
    ) -> Self {
        let (lhs, lhs_stderr) = mean_and_stderr(lhs_i);
        // Scaling by the largest term keeps tiny densities from underflowing.
        let shift = log_a_i.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let scaled: Vec<f64> = log_a_i.iter().map(|l| (l - shift).exp()).collect();
        let (mean_a, se_a) = mean_and_stderr(&scaled);
        let rhs = shift + mean_a.ln();
        // Delta method for the log of a sample mean.
        let rhs_stderr = if mean_a > 0.0 { se_a / mean_a } else { f64::INFINITY };
        let tail_bound = density_bound.map_or(0.0, |r| r * gamma.powi(horizon as i32) / (1.0 - gamma));
        // The 1e-12 term absorbs rounding in the log-sum-exp.
        let tol = 3.0 * lhs_stderr.hypot(rhs_stderr) + tail_bound + 1e-12 * lhs.abs().max(1.0);
        let min_trajectory_slack = slacks.iter().copied().fold(f64::INFINITY, f64::min);
        Self {
            lhs,
            rhs,
            lhs_stderr,
            rhs_stderr,
            samples: lhs_i.len(),
            horizon,
            gamma,
            density_bound,
            tail_bound,
            min_trajectory_slack,
            holds: lhs <= rhs + tol,
            gap: rhs - lhs,
        }
    }

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.12e}"));
        format!(
            "{:.12e},{:.12e},{:.12e},{:.12e},{},{},{},{},{:.12e},{:.12e},{},{:.12e}",
            self.lhs,
            self.rhs,
            self.lhs_stderr,
            self.rhs_stderr,
            self.samples,
            self.horizon,
            self.gamma,
            opt(self.density_bound),
            self.tail_bound,
            self.min_trajectory_slack,
            self.holds,
            self.gap
        )
    }
}

impl fmt::Display for BoundReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "lhs {:.6} ± {:.2e}, rhs {:.6} ± {:.2e}, gap {:.3e}, N={} T={} γ={} tail ≤ {:.2e}: {}",
            self.lhs,
            self.lhs_stderr,
            self.rhs,
            self.rhs_stderr,
            self.gap,
            self.samples,
            self.horizon,
            self.gamma,
            self.tail_bound,
            if self.holds { "holds" } else { "VIOLATED" }
        )
    }
}

fn check_rollouts(n: usize, horizon: usize) -> Result<()> {
    if n == 0 || horizon == 0 {
        return Err(Error::InvalidArgument("need at least one rollout and one step".into()));
    }
    Ok(())
}

/// Checks `E[Σ λ_t log p_t] ≤ log E[Σ λ_t p_t]` with `p_t` the transition
/// density of reaching the origin from `(x_t, u_t)`.
pub fn verify_prob_bound(
    policy: &dyn Policy,
    model: &EnvModel,
    gamma: f64,
    n: usize,
    horizon: usize,
    rng: &mut Rng,
) -> Result<BoundReport> {
    check_discount(gamma)?;
    check_rollouts(n, horizon)?;
    let weights = discount_weights(gamma, horizon);
    let goal = DVector::zeros(model.state_dim());
    let seed = op_seed(rng);
    let mut lhs_i = Vec::with_capacity(n);
    let mut log_a_i = Vec::with_capacity(n);
    let mut slacks = Vec::with_capacity(n);
    let mut log_p = vec![0.0; horizon];
    for i in 0..n {
        let mut r = indexed(seed, i as u64);
        let x0 = model.sample_initial_state(&mut r);
        simulate(policy, model, x0, horizon, &mut r, |t, x, u, _| {
            log_p[t] = model.transition_logpdf(x, u, ScenarioParams::IDENTITY, &goal)?;
            Ok(())
        })?;
        let (lhs, log_a) = jensen_sides(&weights, &log_p);
        lhs_i.push(lhs);
        log_a_i.push(log_a);
        slacks.push(log_a - lhs);
    }
    Ok(BoundReport::from_sides(
        &lhs_i,
        &log_a_i,
        &slacks,
        horizon,
        gamma,
        model.transition_density_bound(),
    ))
}

/// Single-trajectory version of [`verify_prob_bound`] along the noise-free
/// path `x_{t+1} = E[x_{t+1} | x_t, u_t]` from `x0`.
///
/// A policy that keeps this path at a fixed state yields equal densities at
/// every step, and the two sides coincide.
pub fn verify_prob_bound_mean_path(
    policy: &dyn Policy,
    model: &EnvModel,
    x0: &StateVector,
    gamma: f64,
    horizon: usize,
) -> Result<BoundReport> {
    check_discount(gamma)?;
    check_rollouts(1, horizon)?;
    let goal = DVector::zeros(model.state_dim());
    let mut x = x0.clone();
    let mut log_p = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let u = policy.act(&x);
        log_p.push(model.transition_logpdf(&x, &u, ScenarioParams::IDENTITY, &goal)?);
        x = model.step_with_jacobian(&x, &model.bounds().clip(&u))?.0;
    }
    let (lhs, log_a) = jensen_sides(&discount_weights(gamma, horizon), &log_p);
    Ok(BoundReport::from_sides(
        &[lhs],
        &[log_a],
        &[log_a - lhs],
        horizon,
        gamma,
        model.transition_density_bound(),
    ))
}

fn check_spd(m: &DMatrix<f64>, name: &str, dim: usize) -> Result<()> {
    if m.shape() != (dim, dim) {
        return Err(Error::ShapeMismatch {
            expected: dim,
            got: m.nrows(),
        });
    }
    if (m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) || m.clone().cholesky().is_none() {
        return Err(Error::InvalidArgument(format!("{name} must be symmetric positive definite")));
    }
    Ok(())
}

/// Checks `−½ E[Σ λ_t (xᵀMx + uᵀRu)] ≤ log E[Σ λ_t exp(−½ xᵀMx)]`.
///
/// Rollouts are drawn from `rng` exactly as in [`verify_prob_bound`], so
/// two calls with identically seeded generators share trajectories.
#[allow(clippy::too_many_arguments)]
pub fn verify_lqr_bound(
    policy: &dyn Policy,
    model: &EnvModel,
    m: &DMatrix<f64>,
    r: &DMatrix<f64>,
    gamma: f64,
    n: usize,
    horizon: usize,
    rng: &mut Rng,
) -> Result<BoundReport> {
    check_discount(gamma)?;
    check_rollouts(n, horizon)?;
    check_spd(m, "M", model.state_dim())?;
    check_spd(r, "R", model.action_dim())?;
    let weights = discount_weights(gamma, horizon);
    let seed = op_seed(rng);
    let mut lhs_i = Vec::with_capacity(n);
    let mut log_a_i = Vec::with_capacity(n);
    let mut slacks = Vec::with_capacity(n);
    let mut state_cost = vec![0.0; horizon];
    let mut action_cost = vec![0.0; horizon];
    for i in 0..n {
        let mut rr = indexed(seed, i as u64);
        let x0 = model.sample_initial_state(&mut rr);
        simulate(policy, model, x0, horizon, &mut rr, |t, x, u, _| {
            let u = model.bounds().clip(u);
            state_cost[t] = 0.5 * x.dot(&(m * x));
            action_cost[t] = 0.5 * u.dot(&(r * &u));
            Ok(())
        })?;
        let log_terms: Vec<f64> = state_cost.iter().map(|c| -c).collect();
        let (state_lhs, log_a) = jensen_sides(&weights, &log_terms);
        let lhs = state_lhs - weights.iter().zip(&action_cost).map(|(w, c)| w * c).sum::<f64>();
        lhs_i.push(lhs);
        log_a_i.push(log_a);
        slacks.push(log_a - lhs);
    }
    Ok(BoundReport::from_sides(&lhs_i, &log_a_i, &slacks, horizon, gamma, Some(1.0)))
}
