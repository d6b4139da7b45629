//! Particle approximation of the belief state `b_t = p(x_t | I_t)`.
//!
//! The recursion alternates `predict` (propagate each particle through the
//! transition model with its own scenario parameters) and `update` (weight
//! by the measurement likelihood, normalized in log space). Resampling is
//! systematic and left to the caller, conventionally when the effective
//! sample size drops below half the particle count.

use std::io::Write;

use nalgebra::DVector;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::env::{ActionVector, EnvModel, Observation, ScenarioParams, StateVector};
use crate::error::{Error, Result};
use crate::rng::{indexed, op_seed, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub state: StateVector,
    pub psi: ScenarioParams,
}

/// Weighted particle set. Weights always sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleBelief {
    particles: Vec<Particle>,
    weights: Vec<f64>,
    ess: f64,
}

fn effective_sample_size(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

/// Normalizes log-weights; `None` when every entry is `-inf` or NaN.
fn normalize_log_weights(log_w: &[f64]) -> Option<Vec<f64>> {
    let max = log_w
        .iter()
        .copied()
        .filter(|v| !v.is_nan())
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let mut w: Vec<f64> = log_w
        .iter()
        .map(|&l| if l.is_nan() { 0.0 } else { (l - max).exp() })
        .collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    Some(w)
}

impl ParticleBelief {
    pub fn new(particles: Vec<Particle>, weights: Vec<f64>) -> Result<Self> {
        if particles.is_empty() {
            return Err(Error::InvalidArgument("belief needs at least one particle".into()));
        }
        if particles.len() != weights.len() {
            return Err(Error::ShapeMismatch {
                expected: particles.len(),
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::DegenerateWeights);
        }
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        Ok(Self::from_normalized(particles, weights))
    }

    fn from_normalized(particles: Vec<Particle>, weights: Vec<f64>) -> Self {
        let ess = effective_sample_size(&weights);
        Self {
            particles,
            weights,
            ess,
        }
    }

    pub fn uniform(particles: Vec<Particle>) -> Result<Self> {
        let p = particles.len();
        Self::new(particles, vec![1.0; p])
    }

    /// Point belief at a known state.
    pub fn singleton(state: StateVector, psi: ScenarioParams) -> Self {
        Self::from_normalized(vec![Particle { state, psi }], vec![1.0])
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn ess(&self) -> f64 {
        self.ess
    }

    pub fn state_dim(&self) -> usize {
        self.particles[0].state.len()
    }

    /// `p` independent draws of `(x_0, ψ)` from the priors, uniform weights.
    pub fn init_from_prior(model: &EnvModel, p: usize, rng: &mut Rng) -> Result<Self> {
        if p == 0 {
            return Err(Error::InvalidArgument("particle count must be >= 1".into()));
        }
        let seed = op_seed(rng);
        let particles = (0..p)
            .map(|i| {
                let mut r = indexed(seed, i as u64);
                let (state, psi) = model.sample_initial(&mut r);
                Particle { state, psi }
            })
            .collect();
        Ok(Self::from_normalized(particles, vec![1.0 / p as f64; p]))
    }

    /// Propagates every particle through the transition with its own `ψ`.
    pub fn predict(&self, model: &EnvModel, u: &ActionVector, rng: &mut Rng) -> Result<Self> {
        let seed = op_seed(rng);
        let particles = self
            .particles
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut r = indexed(seed, i as u64);
                model.transition(&p.state, u, p.psi, &mut r).map(|state| Particle {
                    state,
                    psi: p.psi,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_normalized(particles, self.weights.clone()))
    }

    /// Bayes update with `w_i ∝ w_i p(y | x_i)`.
    ///
    /// Fails with `DegenerateWeights` when every likelihood underflows to
    /// zero: the measurement is then incompatible with the whole particle
    /// set and the filter has diverged. The weights themselves are computed
    /// in log space, so a merely tiny likelihood still normalizes exactly.
    pub fn update(&self, model: &EnvModel, y: &Observation) -> Result<Self> {
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("observation must be finite".into()));
        }
        let mut best = f64::NEG_INFINITY;
        let log_w = self
            .particles
            .iter()
            .zip(&self.weights)
            .map(|(p, &w)| {
                let ll = model.measurement_logpdf(&p.state, y)?;
                best = best.max(ll);
                Ok(w.ln() + ll)
            })
            .collect::<Result<Vec<f64>>>()?;
        if !(best.exp() > 0.0) {
            return Err(Error::DegenerateWeights);
        }
        let weights = normalize_log_weights(&log_w).ok_or(Error::DegenerateWeights)?;
        Ok(Self::from_normalized(self.particles.clone(), weights))
    }

    /// Systematic resampling; the result has uniform weights.
    pub fn resample(&self, rng: &mut Rng) -> Self {
        let p = self.len();
        let step = 1.0 / p as f64;
        let start: f64 = rng.random::<f64>() * step;
        let mut out = Vec::with_capacity(p);
        let mut cumulative = self.weights[0];
        let mut i = 0;
        for k in 0..p {
            let target = start + k as f64 * step;
            while target > cumulative && i + 1 < p {
                i += 1;
                cumulative += self.weights[i];
            }
            out.push(self.particles[i].clone());
        }
        Self::from_normalized(out, vec![step; p])
    }

    pub fn needs_resampling(&self) -> bool {
        self.ess < 0.5 * self.len() as f64
    }

    pub fn resample_if_needed(&self, rng: &mut Rng) -> Self {
        if self.needs_resampling() {
            self.resample(rng)
        } else {
            self.clone()
        }
    }

    /// Gaussian jitter on `ψ`, clipped to the prior support.
    pub fn jitter_psi(&self, model: &EnvModel, std: f64, rng: &mut Rng) -> Self {
        if std <= 0.0 {
            return self.clone();
        }
        let seed = op_seed(rng);
        let particles = self
            .particles
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut r = indexed(seed, i as u64);
                let mut psi = ScenarioParams {
                    alpha: p.psi.alpha + std * r.sample::<f64, _>(StandardNormal),
                    beta: p.psi.beta + std * r.sample::<f64, _>(StandardNormal),
                };
                if let EnvModel::Cstr(c) = model {
                    psi = c.clamp_psi(psi);
                }
                Particle {
                    state: p.state.clone(),
                    psi,
                }
            })
            .collect();
        Self::from_normalized(particles, self.weights.clone())
    }

    /// Adds independent Gaussian noise with per-coordinate std `std` to every
    /// particle state. Used as artificial process noise by filters whose
    /// model is deterministic, where identical particles would otherwise
    /// never separate again.
    pub fn perturb_states(&self, std: &[f64], rng: &mut Rng) -> Result<Self> {
        if std.len() != self.state_dim() {
            return Err(Error::ShapeMismatch {
                expected: self.state_dim(),
                got: std.len(),
            });
        }
        if std.iter().all(|&s| s == 0.0) {
            return Ok(self.clone());
        }
        let seed = op_seed(rng);
        let particles = self
            .particles
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut r = indexed(seed, i as u64);
                let mut state = p.state.clone();
                for (x, &s) in state.iter_mut().zip(std) {
                    *x += s * r.sample::<f64, _>(StandardNormal);
                }
                Particle { state, psi: p.psi }
            })
            .collect();
        Ok(Self::from_normalized(particles, self.weights.clone()))
    }

    /// `Σ_i w_i f(x_i)`.
    pub fn expectation(&self, f: impl Fn(&Particle) -> DVector<f64>) -> DVector<f64> {
        let mut acc: Option<DVector<f64>> = None;
        for (p, &w) in self.particles.iter().zip(&self.weights) {
            let v = f(p) * w;
            acc = Some(match acc {
                Some(a) => a + v,
                None => v,
            });
        }
        acc.expect("belief is never empty")
    }

    pub fn mean_state(&self) -> StateVector {
        self.expectation(|p| p.state.clone())
    }

    /// One row per particle: `weight, x0..x{n-1}, alpha, beta`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let n = self.state_dim();
        let mut header = vec!["weight".to_string()];
        header.extend((0..n).map(|i| format!("x{i}")));
        header.extend(["alpha".to_string(), "beta".to_string()]);
        writeln!(w, "{}", header.join(","))?;
        for (p, wt) in self.particles.iter().zip(&self.weights) {
            let mut row = vec![wt.to_string()];
            row.extend(p.state.iter().map(|v| v.to_string()));
            row.push(p.psi.alpha.to_string());
            row.push(p.psi.beta.to_string());
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}
