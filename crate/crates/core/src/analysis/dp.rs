use std::io::{self, Write};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::rollout::Policy;
use crate::env::{EnvModel, LinearGaussian, StateVector};
use crate::error::{Error, Result};
use crate::linalg::{gauss_hermite, UniformGrid};
use crate::reward::{RewardSpec, RewardVariant};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    (-0.5 * (x - mean).powi(2) / var - 0.5 * var.ln() - LN_SQRT_2PI).exp()
}

/// Coefficients of a scalar linear-Gaussian system.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Scalar {
    a: f64,
    b: f64,
    q: f64,
    c: f64,
    r: f64,
}

impl Scalar {
    fn of(model: &LinearGaussian) -> Result<Self> {
        if model.state_dim() != 1 || model.action_dim() != 1 || model.obs_dim() != 1 {
            return Err(Error::InvalidArgument(
                "grid dynamic programming needs a scalar linear-Gaussian model".into(),
            ));
        }
        let s = Self {
            a: model.a[(0, 0)],
            b: model.b[(0, 0)],
            q: model.process().cov()[(0, 0)],
            c: model.c[(0, 0)],
            r: model.measurement().cov()[(0, 0)],
        };
        if !(s.q > 0.0) {
            return Err(Error::InvalidArgument("grid dynamic programming needs process noise".into()));
        }
        Ok(s)
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if (0.0..1.0).contains(&gamma) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("discount must lie in [0, 1), got {gamma}")))
    }
}

/// State and action grids for [`grid_value_iteration`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub state: UniformGrid,
    pub actions: UniformGrid,
    pub quadrature_order: usize,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl GridSpec {
    /// State grid over `±range_sigmas · σ_ω` and an action grid wide enough
    /// to cancel `a x` anywhere on it.
    pub fn for_model(model: &LinearGaussian, range_sigmas: f64, points: usize, action_points: usize) -> Result<Self> {
        let s = Scalar::of(model)?;
        let half = range_sigmas * s.q.sqrt();
        let u_half = if s.b != 0.0 { (s.a * half / s.b).abs().max(half) } else { half };
        Ok(Self::with_grids(
            UniformGrid::new(-half, half, points)?,
            UniformGrid::new(-u_half, u_half, action_points)?,
        ))
    }

    pub fn with_grids(state: UniformGrid, actions: UniformGrid) -> Self {
        Self {
            state,
            actions,
            quadrature_order: 16,
            tolerance: 1e-8,
            max_iterations: 100_000,
        }
    }
}

/// Converged value function and greedy policy on a 1-D state grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    pub grid: UniformGrid,
    pub values: Vec<f64>,
    /// Greedy action at each grid point.
    pub policy: Vec<f64>,
    pub gamma: f64,
    pub iterations: usize,
    /// Sup-norm change of the final sweep.
    pub residual: f64,
}

/// `h²/8 · max|V''|` from second differences, scaled by `1/(1 − γ)` because
/// the interpolation error of each sweep is propagated through the
/// discounted recursion.
fn interpolation_error(values: &[f64], h: f64, gamma: f64) -> f64 {
    let curvature = values
        .windows(3)
        .map(|w| ((w[0] - 2.0 * w[1] + w[2]) / (h * h)).abs())
        .fold(0.0, f64::max);
    h * h / 8.0 * curvature / (1.0 - gamma)
}

impl ValueTable {
    pub fn value(&self, x: f64) -> f64 {
        self.grid.interp(&self.values, x)
    }

    /// Greedy action, linearly interpolated between grid points.
    pub fn action(&self, x: f64) -> f64 {
        self.grid.interp(&self.policy, x)
    }

    pub fn interpolation_error(&self) -> f64 {
        interpolation_error(&self.values, self.grid.step(), self.gamma)
    }

    pub fn write_csv(&self, mut out: impl Write) -> io::Result<()> {
        writeln!(out, "x,value,action")?;
        for (i, (v, u)) in self.values.iter().zip(&self.policy).enumerate() {
            writeln!(out, "{:.12e},{:.12e},{:.12e}", self.grid.point(i), v, u)?;
        }
        Ok(())
    }
}

impl Policy for ValueTable {
    fn act(&self, x: &StateVector) -> DVector<f64> {
        DVector::from_element(1, self.action(x[0]))
    }
}

/// Value iteration for a scalar linear-Gaussian model with the given reward.
pub fn grid_value_iteration(model: &LinearGaussian, reward: &RewardSpec, gamma: f64, spec: &GridSpec) -> Result<ValueTable> {
    let env = EnvModel::LinearGaussian(model.clone());
    let mut err = None;
    let table = grid_value_iteration_with(model, gamma, spec, |x, u| {
        let r = reward.stage_reward(&DVector::from_element(1, x), &DVector::from_element(1, u), &env);
        r.unwrap_or_else(|e| {
            err.get_or_insert(e);
            f64::NAN
        })
    });
    match err {
        Some(e) => Err(e),
        None => table,
    }
}

/// [`grid_value_iteration`] with an arbitrary stage reward `r(x, u)`.
///
/// `V(x) = max_u r(x, u) + γ E V(a x + b u + ω)`, with the expectation by
/// Gauss–Hermite quadrature and `V` linearly interpolated (and held constant
/// beyond the grid ends).
pub fn grid_value_iteration_with(
    model: &LinearGaussian,
    gamma: f64,
    spec: &GridSpec,
    mut reward: impl FnMut(f64, f64) -> f64,
) -> Result<ValueTable> {
    check_gamma(gamma)?;
    let s = Scalar::of(model)?;
    let bounds = &model.bounds;
    let xs = spec.state.points();
    let us: Vec<f64> = spec
        .actions
        .points()
        .into_iter()
        .map(|u| u.clamp(bounds.low[0], bounds.high[0]))
        .collect();
    let (nodes, weights) = gauss_hermite(spec.quadrature_order);
    let sigma = s.q.sqrt();
    let (nx, nu) = (xs.len(), us.len());
    let mut rewards = Vec::with_capacity(nx * nu);
    for &x in &xs {
        for &u in &us {
            rewards.push(reward(x, u));
        }
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(Error::InvalidArgument("stage reward is not finite on the grid".into()));
    }
    let mut values = vec![0.0; nx];
    let mut policy = vec![0.0; nx];
    let mut next = vec![0.0; nx];
    for iteration in 1..=spec.max_iterations {
        for (i, &x) in xs.iter().enumerate() {
            let mut best = f64::NEG_INFINITY;
            let mut arg = us[0];
            for (j, &u) in us.iter().enumerate() {
                let mu = s.a * x + s.b * u;
                let cont = if gamma > 0.0 {
                    nodes
                        .iter()
                        .zip(&weights)
                        .map(|(z, w)| w * spec.state.interp(&values, mu + sigma * z))
                        .sum::<f64>()
                } else {
                    0.0
                };
                let qv = rewards[i * nu + j] + gamma * cont;
                if qv > best {
                    best = qv;
                    arg = u;
                }
            }
            next[i] = best;
            policy[i] = arg;
        }
        let residual = values.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        std::mem::swap(&mut values, &mut next);
        if residual < spec.tolerance {
            return Ok(ValueTable {
                grid: spec.state.clone(),
                values,
                policy,
                gamma,
                iterations: iteration,
                residual,
            });
        }
    }
    Err(Error::NonConvergence("grid value iteration", spec.max_iterations))
}

/// Where the goal reward enters the belief Bellman equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardPlacement {
    /// Expected reward under the current belief, before the next observation.
    Prior,
    /// Reward of the posterior after the next observation, averaged over that
    /// observation.
    ObservationConditioned,
}

/// Belief grid over (mean, log-variance) for [`belief_grid_value_iteration`].
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefGridSpec {
    pub mean: UniformGrid,
    pub log_var: UniformGrid,
    pub actions: UniformGrid,
    pub quadrature_order: usize,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl BeliefGridSpec {
    pub fn new(mean: UniformGrid, var_range: (f64, f64), var_points: usize, actions: UniformGrid) -> Result<Self> {
        if !(var_range.0 > 0.0) {
            return Err(Error::InvalidArgument("belief variances must be positive".into()));
        }
        Ok(Self {
            mean,
            log_var: UniformGrid::new(var_range.0.ln(), var_range.1.ln(), var_points)?,
            actions,
            quadrature_order: 16,
            tolerance: 1e-8,
            max_iterations: 100_000,
        })
    }
}

/// Value function over Gaussian beliefs `N(mean, var)`, stored row-major with
/// one row per variance grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefValueTable {
    pub mean: UniformGrid,
    pub log_var: UniformGrid,
    pub values: Vec<f64>,
    pub policy: Vec<f64>,
    pub placement: RewardPlacement,
    pub gamma: f64,
    pub iterations: usize,
    pub residual: f64,
}

impl BeliefValueTable {
    pub fn row(&self, j: usize) -> &[f64] {
        let n = self.mean.n;
        &self.values[j * n..(j + 1) * n]
    }

    pub fn value(&self, mean: f64, var: f64) -> f64 {
        let (j, f) = self.log_var.locate(var.ln());
        let lo = self.mean.interp(self.row(j), mean);
        let hi = self.mean.interp(self.row(j + 1), mean);
        (1.0 - f) * lo + f * hi
    }

    /// Interpolation error estimate of one variance row, as for [`ValueTable`].
    pub fn interpolation_error(&self, j: usize) -> f64 {
        interpolation_error(self.row(j), self.mean.step(), self.gamma)
    }

    pub fn write_csv(&self, mut out: impl Write) -> io::Result<()> {
        writeln!(out, "mean,log_var,value,action")?;
        for j in 0..self.log_var.n {
            for i in 0..self.mean.n {
                let k = j * self.mean.n + i;
                writeln!(
                    out,
                    "{:.12e},{:.12e},{:.12e},{:.12e}",
                    self.mean.point(i),
                    self.log_var.point(j),
                    self.values[k],
                    self.policy[k]
                )?;
            }
        }
        Ok(())
    }
}

/// Value iteration over Gaussian beliefs of a scalar linear-Gaussian model.
///
/// From belief `N(m, s)` and action `u` the prediction is
/// `N(a m + b u, a² s + q)`. After the next observation the posterior variance
/// `s⁺` is deterministic and the posterior mean is distributed as
/// `N(a m + b u, s⁻ − s⁺)`, which the recursion integrates by Gauss–Hermite
/// quadrature.
///
/// Supported rewards: `GoalDensity` under either placement (goal at the
/// origin), and any other variant under `Prior`, where the stage reward is
/// averaged over the belief by quadrature.
pub fn belief_grid_value_iteration(
    model: &LinearGaussian,
    reward: &RewardSpec,
    placement: RewardPlacement,
    gamma: f64,
    spec: &BeliefGridSpec,
) -> Result<BeliefValueTable> {
    check_gamma(gamma)?;
    let s = Scalar::of(model)?;
    let goal_density = matches!(reward.variant, RewardVariant::GoalDensity);
    if !goal_density && placement == RewardPlacement::ObservationConditioned {
        return Err(Error::InvalidArgument(
            "the observation-conditioned placement needs the goal-density reward".into(),
        ));
    }
    let env = EnvModel::LinearGaussian(model.clone());
    let bounds = &model.bounds;
    let ms = spec.mean.points();
    let vars: Vec<f64> = spec.log_var.points().into_iter().map(f64::exp).collect();
    let us: Vec<f64> = spec
        .actions
        .points()
        .into_iter()
        .map(|u| u.clamp(bounds.low[0], bounds.high[0]))
        .collect();
    let (nodes, weights) = gauss_hermite(spec.quadrature_order);
    let (nm, nv, nu) = (ms.len(), vars.len(), us.len());

    // Per variance row: predicted variance, posterior variance, spread of the
    // posterior mean.
    let rows: Vec<(f64, f64, f64)> = vars
        .iter()
        .map(|&var| {
            let pred = s.a * s.a * var + s.q;
            let innov = s.c * s.c * pred + s.r;
            let post = if innov > 0.0 { pred * s.r / innov } else { pred };
            (pred, post, (pred - post).max(0.0))
        })
        .collect();

    let mut rewards = vec![0.0; nv * nm * nu];
    for (j, (&var, &(pred, post, spread))) in vars.iter().zip(&rows).enumerate() {
        for (i, &m) in ms.iter().enumerate() {
            for (k, &u) in us.iter().enumerate() {
                let mu = s.a * m + s.b * u;
                let r = match (placement, goal_density) {
                    (RewardPlacement::Prior, true) => normal_pdf(0.0, mu, pred),
                    (RewardPlacement::ObservationConditioned, _) => nodes
                        .iter()
                        .zip(&weights)
                        .map(|(z, w)| w * normal_pdf(0.0, mu + spread.sqrt() * z, post))
                        .sum(),
                    (RewardPlacement::Prior, false) => {
                        let uv = DVector::from_element(1, u);
                        let mut acc = 0.0;
                        for (z, w) in nodes.iter().zip(&weights) {
                            let x = DVector::from_element(1, m + var.sqrt() * z);
                            acc += w * reward.stage_reward(&x, &uv, &env)?;
                        }
                        acc
                    }
                };
                rewards[(j * nm + i) * nu + k] = r;
            }
        }
    }

    let mut values = vec![0.0; nv * nm];
    let mut policy = vec![0.0; nv * nm];
    let mut next = vec![0.0; nv * nm];
    let mut post_row = vec![0.0; nm];
    for iteration in 1..=spec.max_iterations {
        for (j, &(_, post, spread)) in rows.iter().enumerate() {
            let (jl, f) = spec.log_var.locate(post.ln());
            for i in 0..nm {
                post_row[i] = (1.0 - f) * values[jl * nm + i] + f * values[(jl + 1) * nm + i];
            }
            let sd = spread.sqrt();
            for (i, &m) in ms.iter().enumerate() {
                let mut best = f64::NEG_INFINITY;
                let mut arg = us[0];
                for (k, &u) in us.iter().enumerate() {
                    let mu = s.a * m + s.b * u;
                    let cont: f64 = nodes
                        .iter()
                        .zip(&weights)
                        .map(|(z, w)| w * spec.mean.interp(&post_row, mu + sd * z))
                        .sum();
                    let qv = rewards[(j * nm + i) * nu + k] + gamma * cont;
                    if qv > best {
                        best = qv;
                        arg = u;
                    }
                }
                next[j * nm + i] = best;
                policy[j * nm + i] = arg;
            }
        }
        let residual = values.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        std::mem::swap(&mut values, &mut next);
        if residual < spec.tolerance {
            return Ok(BeliefValueTable {
                mean: spec.mean.clone(),
                log_var: spec.log_var.clone(),
                values,
                policy,
                placement,
                gamma,
                iterations: iteration,
                residual,
            });
        }
    }
    Err(Error::NonConvergence("belief grid value iteration", spec.max_iterations))
}
