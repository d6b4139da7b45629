//! Numerical checks of the goal-oriented control theory: Monte-Carlo bound
//! verification, grid dynamic programming, and closed-form oracles.

mod bounds;
mod corollary;
mod dp;
mod oracles;
mod rollout;
mod trajectory;


pub use bounds::{verify_lqr_bound, verify_prob_bound, verify_prob_bound_mean_path, BoundReport};
pub use corollary::{corollary1_study, Corollary1Config, Corollary1Report};
pub use dp::{
    belief_grid_value_iteration, grid_value_iteration, grid_value_iteration_with, BeliefGridSpec,
    BeliefValueTable, GridSpec, RewardPlacement, ValueTable,
};
pub use oracles::{dlqr, dlqr_with_cost, kalman_filter, GaussianBelief};
pub use rollout::{
    discounted_returns, goal_density, policy_eval_goal_objective, LinearPolicy, Policy, PolicyEvaluation,
};
pub use trajectory::{discount_weights, jensen_sides, score_trajectory, trajectory_jensen, Trajectory};
