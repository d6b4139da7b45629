use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::buffer::BeliefTransition;
use crate::belief::ParticleBelief;
use crate::env::{ActionBounds, ActionVector, EnvModel, StateVector};
use crate::error::{Error, Result};
use crate::nnopt::{Mlp, Optimizer, OptimizerConfig};
use crate::rng::Rng;

const LOG_STD_MIN: f64 = -5.0;
const LOG_STD_MAX: f64 = 1.0;
const SQUASH_EPS: f64 = 1e-6;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Soft actor-critic hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SacConfig {
    pub hidden: Vec<usize>,
    pub actor_optimizer: OptimizerConfig,
    pub critic_optimizer: OptimizerConfig,
    /// Learning rate of `log α`.
    pub alpha_lr: f64,
    pub initial_alpha: f64,
    /// With `false` the temperature stays at `initial_alpha`.
    pub auto_entropy: bool,
    /// Defaults to `−action_dim`.
    pub target_entropy: Option<f64>,
    /// `false` trains and queries a single critic.
    pub twin_critics: bool,
    /// Target networks keep this fraction of their weights per update.
    pub polyak: f64,
    /// Multiplies stored rewards when forming critic targets.
    pub reward_scale: f64,
}

impl Default for SacConfig {
    fn default() -> Self {
        let opt = OptimizerConfig {
            lr: 3e-4,
            ..OptimizerConfig::default()
        };
        Self {
            hidden: vec![64, 64],
            actor_optimizer: opt,
            critic_optimizer: opt,
            alpha_lr: 3e-4,
            initial_alpha: 0.1,
            auto_entropy: true,
            target_entropy: None,
            twin_critics: true,
            polyak: 0.995,
            reward_scale: 1.0,
        }
    }
}

/// Affine map of raw states onto roughly unit scale before they enter a
/// network.
#[derive(Debug, Clone, PartialEq)]
pub struct StateScaling {
    pub center: DVector<f64>,
    pub scale: DVector<f64>,
}

impl StateScaling {
    pub fn identity(n: usize) -> Self {
        Self {
            center: DVector::zeros(n),
            scale: DVector::from_element(n, 1.0),
        }
    }

    /// CSTR states are centered on the initial box and scaled by its full
    /// width; other environments pass through unchanged.
    pub fn for_model(model: &EnvModel) -> Self {
        match model {
            EnvModel::Cstr(c) => {
                let init = &c.params.initial;
                Self {
                    center: DVector::from_row_slice(&init.center),
                    scale: DVector::from_iterator(4, init.half_width.iter().map(|h| (2.0 * h).max(1e-3))),
                }
            }
            other => Self::identity(other.state_dim()),
        }
    }

    pub fn apply(&self, x: &StateVector) -> DVector<f64> {
        (x - &self.center).component_div(&self.scale)
    }
}

/// Scalar Adam for `log α`.
#[derive(Debug, Clone, PartialEq)]
struct ScalarAdam {
    m: f64,
    v: f64,
    t: i32,
}

impl ScalarAdam {
    fn step(&mut self, x: &mut f64, g: f64, lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.t += 1;
        self.m = B1 * self.m + (1.0 - B1) * g;
        self.v = B2 * self.v + (1.0 - B2) * g * g;
        let mh = self.m / (1.0 - B1.powi(self.t));
        let vh = self.v / (1.0 - B2.powi(self.t));
        *x -= lr * mh / (vh.sqrt() + 1e-8);
    }
}

/// Actor, critics, target critics, temperature and their optimizer state.
///
/// The actor maps a scaled state to `[pre-squash mean; raw log-std]`. The
/// critics map `[scaled state; action in [-1, 1]^m]` to a scalar.
#[derive(Debug, Clone)]
pub struct AgentBundle {
    pub actor: Mlp,
    pub critics: [Mlp; 2],
    pub targets: [Mlp; 2],
    pub log_alpha: f64,
    pub scaling: StateScaling,
    pub bounds: ActionBounds,
    pub config: SacConfig,
    actor_opt: Optimizer,
    critic_opts: [Optimizer; 2],
    alpha_opt: ScalarAdam,
    updates: usize,
}

/// Losses and statistics of one [`sac_update`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SacDiagnostics {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha: f64,
    /// Mean `−log π` of the sampled actions.
    pub entropy: f64,
    pub mean_q: f64,
}

fn sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut s = vec![input];
    s.extend_from_slice(hidden);
    s.push(output);
    s
}

fn log_std(raw: f64) -> (f64, f64) {
    let t = raw.tanh();
    let half = 0.5 * (LOG_STD_MAX - LOG_STD_MIN);
    (LOG_STD_MIN + half * (t + 1.0), half * (1.0 - t * t))
}

/// Sum of `terms` in ascending order, so the result does not depend on
/// the order the terms were produced in.
fn sorted_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

impl AgentBundle {
    pub fn new(model: &EnvModel, config: SacConfig, rng: &mut Rng) -> Result<Self> {
        let bounds = model.bounds().clone();
        if !bounds.is_finite() {
            return Err(Error::InvalidArgument("actor-critic agents need finite action bounds".into()));
        }
        Self::with_parts(model.state_dim(), bounds, StateScaling::for_model(model), config, rng)
    }

    pub fn with_parts(
        state_dim: usize,
        bounds: ActionBounds,
        scaling: StateScaling,
        config: SacConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        let m = bounds.dim();
        if scaling.center.len() != state_dim || scaling.scale.len() != state_dim {
            return Err(Error::ShapeMismatch {
                expected: state_dim,
                got: scaling.center.len(),
            });
        }
        if !(0.0..1.0).contains(&config.polyak) {
            return Err(Error::InvalidArgument("polyak factor must lie in [0, 1)".into()));
        }
        if !(config.initial_alpha >= 0.0) {
            return Err(Error::InvalidArgument("initial alpha must be nonnegative".into()));
        }
        let actor = Mlp::new(&sizes(state_dim, &config.hidden, 2 * m), rng)?;
        let c1 = Mlp::new(&sizes(state_dim + m, &config.hidden, 1), rng)?;
        let c2 = Mlp::new(&sizes(state_dim + m, &config.hidden, 1), rng)?;
        Ok(Self {
            actor_opt: config.actor_optimizer.build(),
            critic_opts: [config.critic_optimizer.build(), config.critic_optimizer.build()],
            alpha_opt: ScalarAdam { m: 0.0, v: 0.0, t: 0 },
            targets: [c1.clone(), c2.clone()],
            critics: [c1, c2],
            actor,
            log_alpha: config.initial_alpha.ln(),
            scaling,
            bounds,
            config,
            updates: 0,
        })
    }

    /// Rebuilds a bundle around saved networks. Targets start as copies of
    /// the critics and optimizer state is fresh.
    pub fn from_networks(model: &EnvModel, config: SacConfig, actor: Mlp, critics: [Mlp; 2]) -> Result<Self> {
        let n = model.state_dim();
        let m = model.action_dim();
        let shapes_ok = actor.input_dim() == n
            && actor.output_dim() == 2 * m
            && critics.iter().all(|c| c.input_dim() == n + m && c.output_dim() == 1);
        if !shapes_ok {
            return Err(Error::Checkpoint(format!(
                "network shapes do not fit a {n}-state, {m}-action model"
            )));
        }
        let mut bundle = Self::new(model, config, &mut crate::rng::seeded(0))?;
        bundle.actor = actor;
        bundle.targets = critics.clone();
        bundle.critics = critics;
        Ok(bundle)
    }

    pub fn state_dim(&self) -> usize {
        self.scaling.center.len()
    }

    pub fn action_dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    fn n_critics(&self) -> usize {
        if self.config.twin_critics {
            2
        } else {
            1
        }
    }

    fn target_entropy(&self) -> f64 {
        self.config.target_entropy.unwrap_or(-(self.action_dim() as f64))
    }

    /// Deterministic per-state action `μ_θ(x)` in physical units.
    pub fn state_action(&self, x: &StateVector) -> Result<ActionVector> {
        let out = self.actor.forward(&self.scaling.apply(x))?;
        let m = self.action_dim();
        let unit = DVector::from_fn(m, |i, _| out[i].tanh());
        Ok(self.bounds.clip(&self.bounds.from_unit(&unit)))
    }

    /// Critic `k` at a single state and physical action.
    pub fn critic_value(&self, k: usize, x: &StateVector, u: &ActionVector) -> Result<f64> {
        let input = self.critic_input(x, &self.bounds.to_unit(&self.bounds.clip(u)));
        Ok(self.critics[k].forward(&input)?[0])
    }

    fn critic_input(&self, x: &StateVector, a_unit: &DVector<f64>) -> DVector<f64> {
        let s = self.scaling.apply(x);
        DVector::from_iterator(s.len() + a_unit.len(), s.iter().chain(a_unit.iter()).copied())
    }
}

/// `Σ_i w_i min(Q̂_1(x_i, u), Q̂_2(x_i, u))`, or the first critic alone in
/// single-critic mode.
pub fn particle_critic(bundle: &AgentBundle, b: &ParticleBelief, u: &ActionVector) -> Result<f64> {
    let a = bundle.bounds.to_unit(&bundle.bounds.clip(u));
    let mut terms = Vec::with_capacity(b.len());
    for (p, &w) in b.particles().iter().zip(b.weights()) {
        let input = bundle.critic_input(&p.state, &a);
        let mut q = bundle.critics[0].forward(&input)?[0];
        if bundle.config.twin_critics {
            q = q.min(bundle.critics[1].forward(&input)?[0]);
        }
        terms.push(w * q);
    }
    Ok(sorted_sum(terms))
}

/// `Σ_i w_i μ_θ(x_i)`, clipped to the action bounds.
pub fn particle_actor(bundle: &AgentBundle, b: &ParticleBelief) -> Result<ActionVector> {
    let m = bundle.action_dim();
    let mut terms = vec![Vec::with_capacity(b.len()); m];
    for (p, &w) in b.particles().iter().zip(b.weights()) {
        let mu = bundle.state_action(&p.state)?;
        for (d, t) in terms.iter_mut().enumerate() {
            t.push(w * mu[d]);
        }
    }
    let u = DVector::from_iterator(m, terms.into_iter().map(sorted_sum));
    Ok(bundle.bounds.clip(&u))
}

/// Exploratory action: `tanh(m̄ + σ̄ ε)` mapped onto the bounds, where `m̄`
/// and `log σ̄` are the weighted particle means of the actor heads.
pub fn sample_action(bundle: &AgentBundle, b: &ParticleBelief, rng: &mut Rng) -> Result<ActionVector> {
    let s = PolicySample::draw(bundle, &[b], rng)?;
    Ok(bundle.bounds.clip(&bundle.bounds.from_unit(&s.action[0])))
}

/// Reparameterized belief-level policy draw for a batch of beliefs.
struct PolicySample {
    tape: crate::nnopt::GradTape,
    /// Column range of each belief in the batched particle matrix.
    ranges: Vec<(usize, usize)>,
    weights: Vec<f64>,
    /// Per-column `∂ log σ / ∂ raw`.
    dlogstd: DMatrix<f64>,
    std: Vec<DVector<f64>>,
    eps: Vec<DVector<f64>>,
    action: Vec<DVector<f64>>,
    log_prob: Vec<f64>,
}

fn particle_columns(bundle: &AgentBundle, beliefs: &[&ParticleBelief]) -> (DMatrix<f64>, Vec<(usize, usize)>, Vec<f64>) {
    let n = bundle.state_dim();
    let total: usize = beliefs.iter().map(|b| b.len()).sum();
    let mut data = Vec::with_capacity(n * total);
    let mut ranges = Vec::with_capacity(beliefs.len());
    let mut weights = Vec::with_capacity(total);
    let mut start = 0;
    for b in beliefs {
        for (p, &w) in b.particles().iter().zip(b.weights()) {
            data.extend(bundle.scaling.apply(&p.state).iter());
            weights.push(w);
        }
        ranges.push((start, b.len()));
        start += b.len();
    }
    (DMatrix::from_vec(n, total, data), ranges, weights)
}

impl PolicySample {
    fn draw(bundle: &AgentBundle, beliefs: &[&ParticleBelief], rng: &mut Rng) -> Result<Self> {
        let m = bundle.action_dim();
        let (x, ranges, weights) = particle_columns(bundle, beliefs);
        let tape = bundle.actor.forward_tape(&x)?;
        let out = tape.output();
        let mut dlogstd = DMatrix::zeros(m, out.ncols());
        let mut std = Vec::with_capacity(beliefs.len());
        let mut eps = Vec::with_capacity(beliefs.len());
        let mut action = Vec::with_capacity(beliefs.len());
        let mut log_prob = Vec::with_capacity(beliefs.len());
        for &(start, len) in &ranges {
            let mut mean = DVector::<f64>::zeros(m);
            let mut ls = DVector::<f64>::zeros(m);
            for c in start..start + len {
                let w = weights[c];
                for d in 0..m {
                    let (l, dl) = log_std(out[(m + d, c)]);
                    mean[d] += w * out[(d, c)];
                    ls[d] += w * l;
                    dlogstd[(d, c)] = dl;
                }
            }
            let e = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
            let sd = ls.map(f64::exp);
            let a = DVector::from_fn(m, |d, _| (mean[d] + sd[d] * e[d]).tanh());
            let lp: f64 = (0..m)
                .map(|d| -0.5 * e[d] * e[d] - ls[d] - 0.5 * LN_2PI - (1.0 - a[d] * a[d] + SQUASH_EPS).ln())
                .sum();
            std.push(sd);
            eps.push(e);
            action.push(a);
            log_prob.push(lp);
        }
        Ok(Self {
            tape,
            ranges,
            weights,
            dlogstd,
            std,
            eps,
            action,
            log_prob,
        })
    }
}

/// Critic input matrix pairing every particle column with its belief's
/// action.
fn critic_columns(x: &DMatrix<f64>, ranges: &[(usize, usize)], actions: &[DVector<f64>]) -> DMatrix<f64> {
    let n = x.nrows();
    let m = actions[0].len();
    let mut out = DMatrix::zeros(n + m, x.ncols());
    for (&(start, len), a) in ranges.iter().zip(actions) {
        for c in start..start + len {
            out.view_mut((0, c), (n, 1)).copy_from(&x.column(c));
            out.view_mut((n, c), (m, 1)).copy_from(a);
        }
    }
    out
}

/// Per-column minimum over the active critics, with the index of the
/// critic attaining it.
fn min_over_critics(outputs: &[DMatrix<f64>]) -> Vec<(f64, usize)> {
    (0..outputs[0].ncols())
        .map(|c| {
            let mut best = (outputs[0][(0, c)], 0);
            for (k, o) in outputs.iter().enumerate().skip(1) {
                if o[(0, c)] < best.0 {
                    best = (o[(0, c)], k);
                }
            }
            best
        })
        .collect()
}

/// Bootstrapped critic targets `scale·r + γ (1 − done) (Q̄(b′, u′) − α log π(u′|b′))`
/// with `u′` drawn from the current actor.
pub fn critic_targets(
    bundle: &AgentBundle,
    batch: &[&BeliefTransition],
    gamma: f64,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let next: Vec<&ParticleBelief> = batch.iter().map(|t| &t.next_belief).collect();
    let sample = PolicySample::draw(bundle, &next, rng)?;
    let input = critic_columns(sample.tape.input(), &sample.ranges, &sample.action);
    let outputs = (0..bundle.n_critics())
        .map(|k| bundle.targets[k].forward_tape(&input).map(|t| t.output().clone()))
        .collect::<Result<Vec<_>>>()?;
    let mins = min_over_critics(&outputs);
    let alpha = bundle.alpha();
    Ok(batch
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let r = bundle.config.reward_scale * t.reward;
            if t.done || gamma == 0.0 {
                return r;
            }
            let (start, len) = sample.ranges[k];
            let q: f64 = (start..start + len).map(|c| sample.weights[c] * mins[c].0).sum();
            r + gamma * (q - alpha * sample.log_prob[k])
        })
        .collect())
}

/// One soft actor-critic step on `batch`: critic regression, actor ascent,
/// temperature adjustment and Polyak averaging of the targets.
pub fn sac_update(
    bundle: &mut AgentBundle,
    batch: &[&BeliefTransition],
    gamma: f64,
    rng: &mut Rng,
) -> Result<SacDiagnostics> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("sac_update needs a nonempty batch".into()));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidArgument(format!("discount must lie in [0, 1), got {gamma}")));
    }
    let bsz = batch.len() as f64;
    let m = bundle.action_dim();
    let n = bundle.state_dim();
    let alpha = bundle.alpha();
    let y = critic_targets(bundle, batch, gamma, rng)?;

    // Critics.
    let beliefs: Vec<&ParticleBelief> = batch.iter().map(|t| &t.belief).collect();
    let (x, ranges, weights) = particle_columns(bundle, &beliefs);
    let stored: Vec<DVector<f64>> = batch
        .iter()
        .map(|t| bundle.bounds.to_unit(&bundle.bounds.clip(&t.action)))
        .collect();
    let input = critic_columns(&x, &ranges, &stored);
    let mut critic_loss = 0.0;
    let mut mean_q = 0.0;
    for k in 0..bundle.n_critics() {
        let tape = bundle.critics[k].forward_tape(&input)?;
        let out = tape.output();
        let mut d_out = DMatrix::zeros(1, out.ncols());
        let mut loss = 0.0;
        for (j, &(start, len)) in ranges.iter().enumerate() {
            let q: f64 = (start..start + len).map(|c| weights[c] * out[(0, c)]).sum();
            let err = q - y[j];
            loss += err * err / bsz;
            if k == 0 {
                mean_q += q / bsz;
            }
            for c in start..start + len {
                d_out[(0, c)] = 2.0 * err * weights[c] / bsz;
            }
        }
        let (grads, _) = bundle.critics[k].backward(&tape, &d_out);
        bundle.critic_opts[k].step(&mut bundle.critics[k], &grads)?;
        critic_loss += loss / bundle.n_critics() as f64;
    }

    // Actor.
    let sample = PolicySample::draw(bundle, &beliefs, rng)?;
    let input = critic_columns(sample.tape.input(), &sample.ranges, &sample.action);
    let tapes = (0..bundle.n_critics())
        .map(|k| bundle.critics[k].forward_tape(&input))
        .collect::<Result<Vec<_>>>()?;
    let outputs: Vec<DMatrix<f64>> = tapes.iter().map(|t| t.output().clone()).collect();
    let mins = min_over_critics(&outputs);
    let mut d_action = vec![DVector::<f64>::zeros(m); batch.len()];
    for (k, tape) in tapes.iter().enumerate() {
        let mut d_out = DMatrix::zeros(1, input.ncols());
        for c in 0..input.ncols() {
            if mins[c].1 == k {
                d_out[(0, c)] = -sample.weights[c] / bsz;
            }
        }
        let (_, d_in) = bundle.critics[k].backward(tape, &d_out);
        for (j, &(start, len)) in sample.ranges.iter().enumerate() {
            for c in start..start + len {
                for d in 0..m {
                    d_action[j][d] += d_in[(n + d, c)];
                }
            }
        }
    }
    let mut actor_loss = 0.0;
    let mut d_actor = DMatrix::zeros(2 * m, input.ncols());
    for (j, &(start, len)) in sample.ranges.iter().enumerate() {
        let q: f64 = (start..start + len).map(|c| sample.weights[c] * mins[c].0).sum();
        actor_loss += (alpha * sample.log_prob[j] - q) / bsz;
        for d in 0..m {
            let a = sample.action[j][d];
            let one_minus = 1.0 - a * a;
            let dz = d_action[j][d] * one_minus + alpha / bsz * 2.0 * a * one_minus / (one_minus + SQUASH_EPS);
            let dls = dz * sample.std[j][d] * sample.eps[j][d] - alpha / bsz;
            for c in start..start + len {
                let w = sample.weights[c];
                d_actor[(d, c)] = w * dz;
                d_actor[(m + d, c)] = w * dls * sample.dlogstd[(d, c)];
            }
        }
    }
    let (grads, _) = bundle.actor.backward(&sample.tape, &d_actor);
    bundle.actor_opt.step(&mut bundle.actor, &grads)?;

    let mean_log_prob = sample.log_prob.iter().sum::<f64>() / bsz;
    if bundle.config.auto_entropy {
        let g = -(mean_log_prob + bundle.target_entropy());
        let lr = bundle.config.alpha_lr;
        bundle.alpha_opt.step(&mut bundle.log_alpha, g, lr);
    }
    let tau = bundle.config.polyak;
    for k in 0..2 {
        let [c0, c1] = &bundle.critics;
        let src = if k == 0 { c0 } else { c1 };
        bundle.targets[k].polyak(src, tau);
    }
    bundle.updates += 1;
    if !(critic_loss.is_finite() && actor_loss.is_finite()) || !bundle.actor.is_finite() {
        return Err(Error::TrainingAborted(1));
    }
    Ok(SacDiagnostics {
        critic_loss,
        actor_loss,
        alpha: bundle.alpha(),
        entropy: -mean_log_prob,
        mean_q,
    })
}
