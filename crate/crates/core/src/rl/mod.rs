//! Soft actor-critic over particle beliefs.
//!
//! Both networks act on individual particle states. The belief-level
//! critic is the weighted particle mean of the per-state critic, and the
//! deterministic belief-level action is the weighted mean of the per-state
//! actions. Six agents (three information regimes times two reward
//! families) are trained and compared on the CSTR.

mod agent;
mod buffer;
mod episode;
mod train;

pub use agent::{
    critic_targets, particle_actor, particle_critic, sac_update, sample_action, AgentBundle, SacConfig,
    SacDiagnostics, StateScaling,
};
pub use buffer::{BeliefTransition, ReplayBuffer};
pub use episode::{
    run_episode, write_trace_csv, ActionMode, AgentInput, Episode, EpisodeSettings, ExperimentRegime, TraceRow,
    TruthMode,
};
pub use train::{
    evaluate_agent, median, trace_episode, train_agent, train_agents, write_eval_csv, AgentSpec, EpisodeLog,
    EvalRow, MetricConfig, RewardFamily, RewardScales, RlConfig, TrainedAgent, TrainingReport,
};
