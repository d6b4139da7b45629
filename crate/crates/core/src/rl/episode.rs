use std::io::Write;

use nalgebra::DVector;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::agent::{particle_actor, sample_action, AgentBundle};
use super::buffer::BeliefTransition;
use crate::analysis::Trajectory;
use crate::belief::ParticleBelief;
use crate::env::{ActionVector, EnvModel, Observation, StateVector};
use crate::error::{Error, Result};
use crate::reward::RewardSpec;
use crate::rng::Rng;

/// Information available to an agent.
///
/// * `Full`: noisy measurements, unknown `ψ` fixed per episode, particle
///   belief over `(x, ψ)`.
/// * `Partial`: as `Full`, but during training the true `ψ` is redrawn
///   every few steps.
/// * `Minimal`: trained on the nominal `ψ` with the true state; at
///   evaluation the raw measurement stands in for the state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentRegime {
    Full,
    Partial,
    Minimal,
}

impl ExperimentRegime {
    pub const ALL: [ExperimentRegime; 3] = [Self::Full, Self::Partial, Self::Minimal];

    pub fn name(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::Partial => "partial",
            Self::Minimal => "minimal",
        }
    }
}

/// How the true scenario parameters evolve within an episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TruthMode {
    /// `ψ ~ p(ψ)` once per episode.
    FixedRandom,
    Nominal,
    /// `ψ ~ p(ψ)` at the start and again every `period` steps.
    Varying { period: usize },
}

/// What the agent conditions on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AgentInput {
    Particles { count: usize },
    TrueState,
    /// Measurement treated as the state (certainty equivalence).
    Observation,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActionMode {
    Uniform,
    Explore,
    Deterministic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSettings {
    pub steps: usize,
    pub truth: TruthMode,
    pub input: AgentInput,
    pub actions: ActionMode,
    /// Std of the Gaussian jitter applied to particle `ψ` after resampling.
    pub psi_jitter: f64,
    /// Per-coordinate std of the artificial process noise the filter adds
    /// to predicted particles; empty for none.
    pub filter_noise: Vec<f64>,
    /// Coordinate reported in the trace.
    pub trace_dim: usize,
    pub gamma: f64,
}

/// One row of the per-step trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    pub true_value: f64,
    pub estimate_mean: f64,
    pub particle_min: f64,
    pub particle_max: f64,
    pub reward: f64,
}

impl TraceRow {
    pub const CSV_HEADER: &'static str = "t,true_cb,estimated_cb_mean,particle_min,particle_max,estimated_reward";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
            self.t, self.true_value, self.estimate_mean, self.particle_min, self.particle_max, self.reward
        )
    }
}

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{}", TraceRow::CSV_HEADER)?;
    for r in rows {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub trajectory: Trajectory,
    pub transitions: Vec<BeliefTransition>,
    pub trace: Vec<TraceRow>,
    /// Times the filter collapsed and was reset to the prior.
    pub belief_resets: usize,
    /// The state left the finite range and the episode stopped early.
    pub terminated: bool,
}

fn envelope(b: &ParticleBelief, dim: usize) -> (f64, f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut mean = 0.0;
    for (p, w) in b.particles().iter().zip(b.weights()) {
        lo = lo.min(p.state[dim]);
        hi = hi.max(p.state[dim]);
        mean += w * p.state[dim];
    }
    (mean, lo, hi)
}

fn uniform_action(model: &EnvModel, rng: &mut Rng) -> ActionVector {
    let b = model.bounds();
    DVector::from_fn(b.dim(), |i, _| rng.random_range(b.low[i]..=b.high[i]))
}

/// Filter step `b′ = update(predict(b, u), y′)`. A collapse re-initializes
/// from the prior, conditioned on `y′` when that succeeds.
fn filter_step(
    model: &EnvModel,
    b: &ParticleBelief,
    u: &ActionVector,
    y: &Observation,
    noise: &[f64],
    rng: &mut Rng,
) -> Result<(ParticleBelief, bool)> {
    let mut predicted = b.predict(model, u, rng)?;
    if !noise.is_empty() {
        predicted = predicted.perturb_states(noise, rng)?;
    }
    match predicted.update(model, y) {
        Ok(post) => Ok((post, false)),
        Err(Error::DegenerateWeights) => {
            let prior = ParticleBelief::init_from_prior(model, b.len(), rng)?;
            let post = prior.update(model, y).unwrap_or(prior);
            Ok((post, true))
        }
        Err(e) => Err(e),
    }
}

/// Closed-loop episode of `bundle` on `model`.
///
/// `env_rng` drives everything the agent cannot influence (initial state,
/// `ψ`, process and measurement noise) so agents evaluated with equal
/// `env_rng` seeds face the same conditions; `agent_rng` drives the filter
/// and exploration.
pub fn run_episode(
    bundle: &AgentBundle,
    model: &EnvModel,
    reward: &RewardSpec,
    settings: &EpisodeSettings,
    env_rng: &mut Rng,
    agent_rng: &mut Rng,
) -> Result<Episode> {
    if settings.steps == 0 {
        return Err(Error::InvalidArgument("episodes need at least one step".into()));
    }
    if settings.trace_dim >= model.state_dim() {
        return Err(Error::InvalidArgument("trace dimension out of range".into()));
    }
    let particle_input = matches!(settings.input, AgentInput::Particles { .. });
    if reward.is_measurement_conditioned() && !particle_input {
        return Err(Error::InvalidArgument(
            "measurement-conditioned rewards need a particle belief".into(),
        ));
    }
    let mut x = model.sample_initial_state(env_rng);
    let mut psi = match settings.truth {
        TruthMode::Nominal => model.nominal_psi(),
        _ => model.sample_psi(env_rng),
    };
    let y = model.measure(&x, env_rng);
    let nominal = model.nominal_psi();
    let point = |x: &StateVector, y: &Observation| -> ParticleBelief {
        match settings.input {
            AgentInput::Observation => ParticleBelief::singleton(y.clone(), nominal),
            _ => ParticleBelief::singleton(x.clone(), nominal),
        }
    };
    let mut resets = 0;
    let mut belief = match settings.input {
        AgentInput::Particles { count } => {
            let prior = ParticleBelief::init_from_prior(model, count, agent_rng)?;
            let post = match prior.update(model, &y) {
                Ok(b) => b,
                Err(Error::DegenerateWeights) => {
                    resets += 1;
                    prior
                }
                Err(e) => return Err(e),
            };
            post.resample_if_needed(agent_rng)
        }
        _ => point(&x, &y),
    };

    let mut states = vec![x.clone()];
    let mut actions = Vec::with_capacity(settings.steps);
    let mut observations = vec![y.clone()];
    let mut rewards = Vec::with_capacity(settings.steps);
    let mut transitions = Vec::with_capacity(settings.steps);
    let mut trace = Vec::with_capacity(settings.steps);
    let mut terminated = false;
    for t in 0..settings.steps {
        if let TruthMode::Varying { period } = settings.truth {
            if period > 0 && t > 0 && t % period == 0 {
                psi = model.sample_psi(env_rng);
            }
        }
        let u = match settings.actions {
            ActionMode::Uniform => uniform_action(model, agent_rng),
            ActionMode::Explore => sample_action(bundle, &belief, agent_rng)?,
            ActionMode::Deterministic => particle_actor(bundle, &belief)?,
        };
        let x_next = match model.transition(&x, &u, psi, env_rng) {
            Ok(v) => v,
            Err(Error::NonFiniteState) => {
                terminated = true;
                break;
            }
            Err(e) => return Err(e),
        };
        let y_next = model.measure(&x_next, env_rng);
        let (next_belief, r) = if particle_input {
            let (post, reset) = filter_step(model, &belief, &u, &y_next, &settings.filter_noise, agent_rng)?;
            resets += reset as usize;
            let r = reward.expected_reward(&post, &u, model)?;
            (post, r)
        } else {
            let r = reward.stage_reward(&x_next, &u, model)?;
            (point(&x_next, &y_next), r)
        };
        let (mean, lo, hi) = envelope(&next_belief, settings.trace_dim);
        trace.push(TraceRow {
            t: t + 1,
            true_value: x_next[settings.trace_dim],
            estimate_mean: mean,
            particle_min: lo,
            particle_max: hi,
            reward: r,
        });
        transitions.push(BeliefTransition::new(
            belief,
            u.clone(),
            r,
            next_belief.clone(),
            y_next.clone(),
            false,
        )?);
        belief = if particle_input {
            let resampled = next_belief.resample_if_needed(agent_rng);
            if next_belief.needs_resampling() {
                resampled.jitter_psi(model, settings.psi_jitter, agent_rng)
            } else {
                resampled
            }
        } else {
            next_belief
        };
        states.push(x_next.clone());
        actions.push(u);
        observations.push(y_next.clone());
        rewards.push(r);
        x = x_next;
    }
    let mut trajectory = Trajectory::new(states, actions, rewards, settings.gamma)?;
    trajectory.observations = Some(observations);
    Ok(Episode {
        trajectory,
        transitions,
        trace,
        belief_resets: resets,
        terminated,
    })
}
