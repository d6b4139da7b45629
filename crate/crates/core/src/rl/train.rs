use std::io::Write;

use serde::{Deserialize, Serialize};

use super::agent::{sac_update, AgentBundle, SacConfig, SacDiagnostics};
use super::buffer::ReplayBuffer;
use super::episode::{
    run_episode, ActionMode, AgentInput, Episode, EpisodeSettings, ExperimentRegime, TruthMode,
};
use crate::env::{Cstr, EnvModel};
use crate::error::{Error, Result};
use crate::reward::{time_near_goal, RewardConfig, RewardSpec};
use crate::rng::{indexed, substream, substream_seed};

/// Reward family an agent is trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardFamily {
    GoalConditioned,
    Quadratic,
}

impl RewardFamily {
    pub fn name(self) -> &'static str {
        match self {
            Self::GoalConditioned => "goal_conditioned",
            Self::Quadratic => "quadratic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub regime: ExperimentRegime,
    pub reward: RewardFamily,
}

impl AgentSpec {
    pub fn name(&self) -> String {
        format!("{}-{}", self.reward.name(), self.regime.name())
    }

    /// The six combinations, goal-conditioned first.
    pub fn all() -> Vec<AgentSpec> {
        [RewardFamily::GoalConditioned, RewardFamily::Quadratic]
            .into_iter()
            .flat_map(|reward| ExperimentRegime::ALL.into_iter().map(move |regime| AgentSpec { regime, reward }))
            .collect()
    }
}

/// Scales applied to each training reward before it enters the critic
/// targets. They bring the three reward signals to comparable magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardScales {
    pub goal_belief: f64,
    pub goal_state: f64,
    pub quadratic: f64,
}

impl Default for RewardScales {
    fn default() -> Self {
        Self {
            goal_belief: 0.1,
            goal_state: 1.0,
            quadratic: 0.01,
        }
    }
}

/// Evaluation score: `Σ_t exp(−(goal − x_t[dim])² / (2σ²))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricConfig {
    pub dim: usize,
    pub goal: f64,
    pub sigma: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            dim: Cstr::CB,
            goal: 0.6,
            sigma: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RlConfig {
    pub sac: SacConfig,
    pub gamma: f64,
    pub episodes: usize,
    pub steps: usize,
    /// Initial episodes driven by uniform random actions.
    pub warmup_episodes: usize,
    /// Gradient steps per environment step once the buffer holds a batch.
    pub updates_per_step: usize,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub train_particles: usize,
    pub eval_particles: usize,
    pub eval_episodes: usize,
    /// `ψ` redraw period of the Partial regime's time-varying truth.
    pub psi_period: usize,
    pub psi_jitter: f64,
    /// Artificial process noise of the agents' particle filters, one std
    /// per state coordinate. Empty disables it.
    pub filter_noise: Vec<f64>,
    /// Belief-level reward of goal-conditioned Full and Partial agents.
    pub goal_reward: RewardConfig,
    /// State-level reward of the goal-conditioned Minimal agent.
    pub minimal_goal_reward: RewardConfig,
    pub quadratic_reward: RewardConfig,
    pub reward_scales: RewardScales,
    pub metric: MetricConfig,
    pub agents: Vec<AgentSpec>,
}

impl Default for RlConfig {
    fn default() -> Self {
        let goal = vec![0.0, 0.6, 0.0, 0.0];
        Self {
            sac: SacConfig::default(),
            gamma: 0.95,
            episodes: 300,
            steps: 100,
            warmup_episodes: 10,
            updates_per_step: 1,
            batch_size: 256,
            buffer_capacity: 100_000,
            train_particles: 10,
            eval_particles: 100,
            eval_episodes: 1000,
            psi_period: 25,
            psi_jitter: 0.005,
            filter_noise: vec![0.006, 0.006, 0.15, 0.15],
            goal_reward: RewardConfig::MeasurementConditioned {
                epsilon: 0.05,
                goal: goal.clone(),
                goal_dims: vec![Cstr::CB],
            },
            minimal_goal_reward: RewardConfig::GaussianShaped {
                m: vec![400.0],
                goal: goal.clone(),
                dims: Some(vec![Cstr::CB]),
            },
            quadratic_reward: RewardConfig::Quadratic {
                m: vec![400.0],
                r: vec![],
                goal,
                dims: Some(vec![Cstr::CB]),
            },
            reward_scales: RewardScales::default(),
            metric: MetricConfig::default(),
            agents: AgentSpec::all(),
        }
    }
}

impl RlConfig {
    pub fn validate(&self, model: &EnvModel) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in [0, 1)");
        }
        if self.steps == 0 || self.batch_size == 0 || self.train_particles == 0 || self.eval_particles == 0 {
            return bad("steps, batch_size and particle counts must be positive");
        }
        if !self.filter_noise.is_empty()
            && (self.filter_noise.len() != model.state_dim() || self.filter_noise.iter().any(|s| !(*s >= 0.0)))
        {
            return bad("filter_noise needs one nonnegative std per state coordinate");
        }
        if self.agents.is_empty() {
            return bad("at least one agent is required");
        }
        if self.metric.dim >= model.state_dim() || !(self.metric.sigma > 0.0) {
            return bad("metric dimension out of range or sigma not positive");
        }
        for spec in &self.agents {
            let r = self.reward_for(spec, model)?;
            if r.is_measurement_conditioned() && spec.regime == ExperimentRegime::Minimal {
                return bad("the minimal regime needs a state-level reward");
            }
        }
        Ok(())
    }

    /// Training reward and its scale for `spec`.
    pub fn reward_for(&self, spec: &AgentSpec, model: &EnvModel) -> Result<RewardSpec> {
        let cfg = match (spec.reward, spec.regime) {
            (RewardFamily::GoalConditioned, ExperimentRegime::Minimal) => &self.minimal_goal_reward,
            (RewardFamily::GoalConditioned, _) => &self.goal_reward,
            (RewardFamily::Quadratic, _) => &self.quadratic_reward,
        };
        cfg.build(model.state_dim(), model.action_dim())
    }

    pub fn reward_scale(&self, spec: &AgentSpec) -> f64 {
        match (spec.reward, spec.regime) {
            (RewardFamily::GoalConditioned, ExperimentRegime::Minimal) => self.reward_scales.goal_state,
            (RewardFamily::GoalConditioned, _) => self.reward_scales.goal_belief,
            (RewardFamily::Quadratic, _) => self.reward_scales.quadratic,
        }
    }

    pub fn training_settings(&self, regime: ExperimentRegime, actions: ActionMode) -> EpisodeSettings {
        let (truth, input) = match regime {
            ExperimentRegime::Full => (TruthMode::FixedRandom, AgentInput::Particles { count: self.train_particles }),
            ExperimentRegime::Partial => (
                TruthMode::Varying { period: self.psi_period },
                AgentInput::Particles { count: self.train_particles },
            ),
            ExperimentRegime::Minimal => (TruthMode::Nominal, AgentInput::TrueState),
        };
        EpisodeSettings {
            steps: self.steps,
            truth,
            input,
            actions,
            psi_jitter: self.psi_jitter,
            filter_noise: self.filter_noise.clone(),
            trace_dim: self.metric.dim,
            gamma: self.gamma.max(f64::MIN_POSITIVE),
        }
    }

    /// Settings shared by all agents in the comparison: random fixed `ψ`,
    /// noisy measurements, deterministic actions. Only the agent's own
    /// state estimate differs.
    pub fn evaluation_settings(&self, regime: ExperimentRegime, particles: usize) -> EpisodeSettings {
        let input = match regime {
            ExperimentRegime::Minimal => AgentInput::Observation,
            _ => AgentInput::Particles { count: particles },
        };
        EpisodeSettings {
            steps: self.steps,
            truth: TruthMode::FixedRandom,
            input,
            actions: ActionMode::Deterministic,
            psi_jitter: self.psi_jitter,
            filter_noise: self.filter_noise.clone(),
            trace_dim: self.metric.dim,
            gamma: self.gamma.max(f64::MIN_POSITIVE),
        }
    }

    /// Evaluation in the environment the regime is defined by: the
    /// Partial truth redraws `ψ` mid-episode, the others keep it fixed.
    pub fn regime_evaluation_settings(&self, regime: ExperimentRegime, particles: usize) -> EpisodeSettings {
        let mut s = self.evaluation_settings(regime, particles);
        if regime == ExperimentRegime::Partial {
            s.truth = TruthMode::Varying { period: self.psi_period };
        }
        s
    }
}

/// Per-episode training statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeLog {
    pub episode: usize,
    pub return_sum: f64,
    pub time_near_goal: f64,
    pub belief_resets: usize,
    pub last_update: Option<SacDiagnostics>,
}

#[derive(Debug, Clone)]
pub struct TrainedAgent {
    pub spec: AgentSpec,
    pub bundle: AgentBundle,
    pub log: Vec<EpisodeLog>,
}

/// One row of the evaluation table.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub agent: String,
    pub regime: ExperimentRegime,
    pub reward: RewardFamily,
    pub seed: u64,
    pub episode: usize,
    pub time_near_goal: f64,
}

impl EvalRow {
    pub const CSV_HEADER: &'static str = "agent,regime,reward_variant,seed,episode,time_near_goal";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.12e}",
            self.agent,
            self.regime.name(),
            self.reward.name(),
            self.seed,
            self.episode,
            self.time_near_goal
        )
    }
}

pub fn write_eval_csv<W: Write>(rows: &[EvalRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{}", EvalRow::CSV_HEADER)?;
    for r in rows {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}

/// Trains one agent with seeded streams derived from `seed` and the agent
/// name.
pub fn train_agent(cfg: &RlConfig, model: &EnvModel, spec: AgentSpec, seed: u64) -> Result<TrainedAgent> {
    cfg.validate(model)?;
    let name = spec.name();
    let reward = cfg.reward_for(&spec, model)?;
    let mut sac = cfg.sac.clone();
    sac.reward_scale = cfg.reward_scale(&spec);
    let mut bundle = AgentBundle::new(model, sac, &mut substream(seed, &format!("init/{name}")))?;
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity)?;
    let env_seed = substream_seed(seed, &format!("train-env/{name}"));
    let agent_seed = substream_seed(seed, &format!("train-agent/{name}"));
    let mut update_rng = substream(seed, &format!("updates/{name}"));
    let mut log = Vec::with_capacity(cfg.episodes);
    for ep in 0..cfg.episodes {
        let mode = if ep < cfg.warmup_episodes {
            ActionMode::Uniform
        } else {
            ActionMode::Explore
        };
        let settings = cfg.training_settings(spec.regime, mode);
        let episode = run_episode(
            &bundle,
            model,
            &reward,
            &settings,
            &mut indexed(env_seed, ep as u64),
            &mut indexed(agent_seed, ep as u64),
        )?;
        let steps = episode.transitions.len();
        let return_sum = episode.trajectory.rewards.iter().sum();
        let score = time_near_goal(&episode.trajectory, cfg.metric.dim, cfg.metric.goal, cfg.metric.sigma);
        let resets = episode.belief_resets;
        buffer.extend(episode.transitions);
        let mut last_update = None;
        if buffer.len() >= cfg.batch_size {
            for _ in 0..steps * cfg.updates_per_step {
                let batch = buffer.sample(cfg.batch_size, &mut update_rng);
                last_update = Some(sac_update(&mut bundle, &batch, cfg.gamma, &mut update_rng)?);
            }
        }
        log.push(EpisodeLog {
            episode: ep,
            return_sum,
            time_near_goal: score,
            belief_resets: resets,
            last_update,
        });
    }
    Ok(TrainedAgent { spec, bundle, log })
}

/// Evaluates `agent` on `episodes` common episodes. Episode `e` uses the
/// same environment stream for every agent.
pub fn evaluate_agent(
    cfg: &RlConfig,
    model: &EnvModel,
    agent: &TrainedAgent,
    settings: &EpisodeSettings,
    episodes: usize,
    seed: u64,
) -> Result<Vec<EvalRow>> {
    let reward = cfg.reward_for(&agent.spec, model)?;
    let env_seed = substream_seed(seed, "eval-env");
    let agent_seed = substream_seed(seed, &format!("eval-agent/{}", agent.spec.name()));
    (0..episodes)
        .map(|e| {
            let ep = run_episode(
                &agent.bundle,
                model,
                &reward,
                settings,
                &mut indexed(env_seed, e as u64),
                &mut indexed(agent_seed, e as u64),
            )?;
            Ok(EvalRow {
                agent: agent.spec.name(),
                regime: agent.spec.regime,
                reward: agent.spec.reward,
                seed,
                episode: e,
                time_near_goal: time_near_goal(&ep.trajectory, cfg.metric.dim, cfg.metric.goal, cfg.metric.sigma),
            })
        })
        .collect()
}

/// Single evaluation episode with its trace, for plotting.
pub fn trace_episode(
    cfg: &RlConfig,
    model: &EnvModel,
    agent: &TrainedAgent,
    particles: usize,
    seed: u64,
    episode: usize,
) -> Result<Episode> {
    let reward = cfg.reward_for(&agent.spec, model)?;
    let settings = cfg.evaluation_settings(agent.spec.regime, particles);
    run_episode(
        &agent.bundle,
        model,
        &reward,
        &settings,
        &mut indexed(substream_seed(seed, "eval-env"), episode as u64),
        &mut indexed(substream_seed(seed, &format!("trace-agent/{}", agent.spec.name())), episode as u64),
    )
}

#[derive(Debug, Clone)]
pub struct TrainingReport {
    pub agents: Vec<TrainedAgent>,
    pub evaluation: Vec<EvalRow>,
}

impl TrainingReport {
    pub fn scores(&self, spec: &AgentSpec) -> Vec<f64> {
        let name = spec.name();
        self.evaluation
            .iter()
            .filter(|r| r.agent == name)
            .map(|r| r.time_near_goal)
            .collect()
    }

    pub fn median(&self, spec: &AgentSpec) -> Option<f64> {
        median(&self.scores(spec))
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Trains every configured agent and evaluates all of them on the same
/// fixed-`ψ` episodes.
pub fn train_agents(cfg: &RlConfig, model: &EnvModel, seed: u64) -> Result<TrainingReport> {
    cfg.validate(model)?;
    let mut agents = Vec::with_capacity(cfg.agents.len());
    let mut evaluation = Vec::new();
    for &spec in &cfg.agents {
        let agent = train_agent(cfg, model, spec, seed)?;
        let settings = cfg.evaluation_settings(spec.regime, cfg.eval_particles);
        evaluation.extend(evaluate_agent(cfg, model, &agent, &settings, cfg.eval_episodes, seed)?);
        agents.push(agent);
    }
    Ok(TrainingReport { agents, evaluation })
}
