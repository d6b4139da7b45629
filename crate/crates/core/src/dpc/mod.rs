//! Differentiable predictive control.
//!
//! A policy network is trained by unrolling the deterministic model from a
//! fixed initial state and descending the exact gradient of a finite-horizon
//! loss. Gradients flow through the network and through every integrator
//! step, using the step Jacobians the environment provides.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::env::{DoublePendulum, EnvModel, StateVector};
use crate::error::{Error, Result};
use crate::nnopt::{GradTape, Mlp, OptimizerConfig, OptimizerKind};
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    /// `-log((1/T) Σ exp(-q_t))`.
    #[serde(alias = "goal")]
    GoalOriented,
    /// `(1/T) Σ q_t`, the exponent of `exp(-(1/T) Σ q_t)`.
    #[serde(alias = "quadratic")]
    Classical,
}

/// Finite-horizon loss over `q_t = ½‖e(x_t)‖²`, `t = 1..T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpcObjective {
    pub kind: ObjectiveKind,
    pub horizon: usize,
}

impl DpcObjective {
    pub fn new(kind: ObjectiveKind, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        Ok(Self { kind, horizon })
    }

    /// Loss and `∂loss/∂q_t`.
    pub fn evaluate(&self, q: &[f64]) -> (f64, Vec<f64>) {
        let n = q.len() as f64;
        match self.kind {
            ObjectiveKind::GoalOriented => {
                let min = q.iter().copied().fold(f64::INFINITY, f64::min);
                let e: Vec<f64> = q.iter().map(|v| (min - v).exp()).collect();
                let s: f64 = e.iter().sum();
                let loss = min - (s / n).ln();
                (loss, e.iter().map(|v| v / s).collect())
            }
            ObjectiveKind::Classical => (q.iter().sum::<f64>() / n, vec![1.0 / n; q.len()]),
        }
    }

    /// The objective in its original (to-maximize) form: `(1/T) Σ r_t` for
    /// the goal-oriented variant, `exp(-(1/T) Σ q_t)` for the classical one.
    pub fn raw_value(&self, loss: f64) -> f64 {
        (-loss).exp()
    }
}

/// Goal residual `e(x)` and its Jacobian.
fn residual(model: &EnvModel, x: &StateVector) -> (DVector<f64>, DMatrix<f64>) {
    match model {
        EnvModel::DoublePendulum(_) => {
            let e = DVector::from_vec(vec![1.0 - x[0].cos(), 1.0 - x[1].cos()]);
            let mut j = DMatrix::zeros(2, x.len());
            j[(0, 0)] = x[0].sin();
            j[(1, 1)] = x[1].sin();
            (e, j)
        }
        _ => (x.clone(), DMatrix::identity(x.len(), x.len())),
    }
}

/// Maps states to policy inputs. For the pendulum the angles enter through
/// their sine and cosine and velocities are scaled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Features {
    pub velocity_scale: f64,
}

impl Features {
    pub fn dim(&self, model: &EnvModel) -> usize {
        match model {
            EnvModel::DoublePendulum(_) => 8,
            _ => model.state_dim(),
        }
    }

    pub fn eval(&self, model: &EnvModel, x: &StateVector) -> (DVector<f64>, DMatrix<f64>) {
        match model {
            EnvModel::DoublePendulum(_) => {
                let s = self.velocity_scale;
                let (s1, c1, s2, c2) = (x[0].sin(), x[0].cos(), x[1].sin(), x[1].cos());
                let f = DVector::from_vec(vec![s1, c1, s2, c2, s * x[2], s * x[3], x[4], s * x[5]]);
                let mut j = DMatrix::zeros(8, 6);
                j[(0, 0)] = c1;
                j[(1, 0)] = -s1;
                j[(2, 1)] = c2;
                j[(3, 1)] = -s2;
                j[(4, 2)] = s;
                j[(5, 3)] = s;
                j[(6, 4)] = 1.0;
                j[(7, 5)] = s;
                (f, j)
            }
            _ => (x.clone(), DMatrix::identity(x.len(), x.len())),
        }
    }
}

/// `u = u_max tanh(out)` when the action set is a finite symmetric box,
/// `u = out` otherwise.
fn squash(model: &EnvModel, out: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let b = model.bounds();
    let symmetric = b.is_finite() && (&b.low + &b.high).amax() == 0.0;
    if symmetric {
        let t = out.map(f64::tanh);
        let u = t.component_mul(&b.high);
        let du = DVector::from_fn(out.len(), |i, _| b.high[i] * (1.0 - t[i] * t[i]));
        (u, du)
    } else {
        (out.clone(), DVector::from_element(out.len(), 1.0))
    }
}

struct StepRecord {
    net: GradTape,
    feature_jac: DMatrix<f64>,
    squash_deriv: DVector<f64>,
    jac_x: DMatrix<f64>,
    jac_u: DMatrix<f64>,
}

/// Everything needed to backpropagate one rollout.
pub struct RolloutTape {
    steps: Vec<StepRecord>,
    /// `∂loss/∂x_t` for `t = 1..T` from the stage terms.
    direct: Vec<DVector<f64>>,
    pub rollout: Rollout,
    pub loss: f64,
}

/// States `x_0..x_T` and actions `u_0..u_{T-1}` of one unrolled episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub states: Vec<StateVector>,
    pub actions: Vec<DVector<f64>>,
    /// `r_t = exp(-q_t)` for `t = 1..T`.
    pub rewards: Vec<f64>,
}

impl Rollout {
    /// Mean of `(cos θ1 + cos θ2) / 2` over the last `k` states.
    pub fn mean_cos_tail(&self, k: usize) -> f64 {
        let n = self.states.len();
        let tail = &self.states[n.saturating_sub(k)..];
        tail.iter().map(|x| 0.5 * (x[0].cos() + x[1].cos())).sum::<f64>() / tail.len() as f64
    }

    /// `t, theta1, theta2, cos1, cos2, u`; the final state has an empty action.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,theta1,theta2,cos1,cos2,u")?;
        for (t, x) in self.states.iter().enumerate() {
            let u = self.actions.get(t).map_or(String::new(), |u| u[0].to_string());
            writeln!(w, "{t},{},{},{},{},{u}", x[0], x[1], x[0].cos(), x[1].cos())?;
        }
        Ok(())
    }
}

/// Unrolls `policy` from `x0` for the objective's horizon and records the
/// tape for `rollout_gradient`.
pub fn rollout_loss(
    policy: &Mlp,
    model: &EnvModel,
    features: Features,
    objective: &DpcObjective,
    x0: &StateVector,
) -> Result<RolloutTape> {
    let horizon = objective.horizon;
    let mut steps = Vec::with_capacity(horizon);
    let mut states = vec![x0.clone()];
    let mut actions = Vec::with_capacity(horizon);
    let mut q = Vec::with_capacity(horizon);
    let mut residual_grads = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let x = states.last().expect("nonempty");
        let (f, feature_jac) = features.eval(model, x);
        let net = policy.forward_tape(&DMatrix::from_column_slice(f.len(), 1, f.as_slice()))?;
        let out = net.output().column(0).into_owned();
        let (u, squash_deriv) = squash(model, &out);
        let (next, jac_x, jac_u) = model.step_with_jacobian(x, &u)?;
        let (e, ej) = residual(model, &next);
        q.push(0.5 * e.norm_squared());
        residual_grads.push(ej.transpose() * e);
        steps.push(StepRecord {
            net,
            feature_jac,
            squash_deriv,
            jac_x,
            jac_u,
        });
        states.push(next);
        actions.push(u);
    }
    let (loss, dq) = objective.evaluate(&q);
    if !loss.is_finite() {
        return Err(Error::NonFiniteState);
    }
    let direct = residual_grads.into_iter().zip(&dq).map(|(g, w)| g * *w).collect();
    let rewards = q.iter().map(|v| (-v).exp()).collect();
    Ok(RolloutTape {
        steps,
        direct,
        rollout: Rollout {
            states,
            actions,
            rewards,
        },
        loss,
    })
}

/// Backpropagation through time: `∂loss/∂θ` for the rollout on `tape`.
pub fn rollout_gradient(policy: &Mlp, tape: &RolloutTape) -> Mlp {
    let mut grads = policy.zeros_like();
    let n = tape.rollout.states[0].len();
    // Adjoint of x_{t+1}.
    let mut lambda = DVector::zeros(n);
    for t in (0..tape.steps.len()).rev() {
        let s = &tape.steps[t];
        lambda += &tape.direct[t];
        let d_u = s.jac_u.transpose() * &lambda;
        let d_out = d_u.component_mul(&s.squash_deriv);
        let (g, d_feat) = policy.backward(&s.net, &DMatrix::from_column_slice(d_out.len(), 1, d_out.as_slice()));
        grads.add_scaled(&g, 1.0);
        lambda = s.jac_x.transpose() * &lambda + s.feature_jac.transpose() * d_feat.column(0);
    }
    grads
}

/// Training configuration for one DPC run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DpcConfig {
    pub objective: ObjectiveKind,
    pub horizon: usize,
    pub iterations: usize,
    pub hidden: Vec<usize>,
    pub velocity_scale: f64,
    pub optimizer: OptimizerConfig,
    /// Mean-cos window for the success metric.
    pub tail: usize,
}

impl Default for DpcConfig {
    fn default() -> Self {
        Self {
            objective: ObjectiveKind::GoalOriented,
            horizon: 75,
            iterations: 2000,
            hidden: vec![64, 64],
            velocity_scale: 0.1,
            optimizer: OptimizerConfig {
                kind: OptimizerKind::Soap,
                lr: 3e-3,
                ..OptimizerConfig::default()
            },
            tail: 25,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub iteration: usize,
    /// Loss that is optimized (reduced form).
    pub loss: f64,
    /// Objective in its original form (`exp(-loss)`).
    pub raw: f64,
    pub mean_cos: f64,
}

#[derive(Debug, Clone)]
pub struct DpcRun {
    pub policy: Mlp,
    pub curve: Vec<CurvePoint>,
    pub final_rollout: Rollout,
    pub seed: u64,
    /// Iterations whose rollout failed, with the reason.
    pub failures: Vec<(usize, String)>,
}

impl DpcRun {
    pub fn final_mean_cos(&self, tail: usize) -> f64 {
        self.final_rollout.mean_cos_tail(tail)
    }

    /// `iteration, loss, raw, mean_cos`.
    pub fn write_curve_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "iteration,loss,raw,mean_cos")?;
        for p in &self.curve {
            writeln!(w, "{},{},{},{}", p.iteration, p.loss, p.raw, p.mean_cos)?;
        }
        Ok(())
    }
}

pub fn initial_state(model: &EnvModel) -> StateVector {
    match model {
        EnvModel::DoublePendulum(_) => DoublePendulum::rest_state(),
        EnvModel::LinearGaussian(m) => m.init_mean.clone(),
        EnvModel::Cstr(c) => DVector::from_row_slice(&c.params.initial.center),
    }
}

pub const MAX_CONSECUTIVE_FAILURES: usize = 3;

/// Trains a policy. A failed rollout reverts to the last good parameters
/// and halves the learning rate; three consecutive failures abort the run.
pub fn train_dpc(cfg: &DpcConfig, model: &EnvModel, seed: u64) -> Result<DpcRun> {
    let objective = DpcObjective::new(cfg.objective, cfg.horizon)?;
    let features = Features {
        velocity_scale: cfg.velocity_scale,
    };
    let mut sizes = vec![features.dim(model)];
    sizes.extend(&cfg.hidden);
    sizes.push(model.action_dim());
    let mut policy = Mlp::new(&sizes, &mut substream(seed, "net-init"))?;
    let x0 = initial_state(model);
    let mut opt = cfg.optimizer.build();
    let mut lr = cfg.optimizer.lr;
    let mut last_good = policy.clone();
    let mut curve = Vec::with_capacity(cfg.iterations);
    let mut failures = Vec::new();
    let mut consecutive = 0;

    for it in 0..cfg.iterations {
        match rollout_loss(&policy, model, features, &objective, &x0) {
            Ok(tape) => {
                let grads = rollout_gradient(&policy, &tape);
                curve.push(CurvePoint {
                    iteration: it,
                    loss: tape.loss,
                    raw: objective.raw_value(tape.loss),
                    mean_cos: tape.rollout.mean_cos_tail(cfg.tail),
                });
                if grads.is_finite() {
                    consecutive = 0;
                    last_good = policy.clone();
                    opt.step(&mut policy, &grads)?;
                    continue;
                }
                failures.push((it, "non-finite gradient".to_string()));
            }
            Err(e) => {
                curve.push(CurvePoint {
                    iteration: it,
                    loss: f64::NAN,
                    raw: f64::NAN,
                    mean_cos: f64::NAN,
                });
                failures.push((it, e.to_string()));
            }
        }
        consecutive += 1;
        if consecutive >= MAX_CONSECUTIVE_FAILURES {
            return Err(Error::TrainingAborted(consecutive));
        }
        policy = last_good.clone();
        lr *= 0.5;
        opt.set_lr(lr);
    }

    let final_rollout = rollout_loss(&policy, model, features, &objective, &x0)?.rollout;
    Ok(DpcRun {
        policy,
        curve,
        final_rollout,
        seed,
        failures,
    })
}
