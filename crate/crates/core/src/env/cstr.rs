//! Van de Vusse CSTR with scenario multipliers on the kinetics.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::scalar::{rk4, Scalar};
use super::{ActionBounds, ScenarioParams};
use crate::error::{Error, Result};
use crate::rng::Rng;

const DEFAULT_CONFIG: &str = include_str!("../../../../configs/env/cstr.toml");
const KELVIN: f64 = 273.15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CstrConstants {
    pub k0_ab: f64,
    pub k0_bc: f64,
    pub k0_ad: f64,
    pub e_ab: f64,
    pub e_bc: f64,
    pub e_ad: f64,
    pub h_ab: f64,
    pub h_bc: f64,
    pub h_ad: f64,
    pub rho: f64,
    pub cp: f64,
    pub cp_k: f64,
    pub area: f64,
    pub volume: f64,
    pub coolant_mass: f64,
    pub t_in: f64,
    pub k_w: f64,
    pub c_a0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CstrPrior {
    pub alpha: [f64; 2],
    pub beta: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CstrInitial {
    pub center: [f64; 4],
    pub half_width: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CstrMeasurement {
    pub std: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CstrAction {
    pub low: [f64; 2],
    pub high: [f64; 2],
}

/// Parameter file schema (`configs/env/cstr.toml`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CstrParams {
    pub dt: f64,
    pub substeps: usize,
    pub constants: CstrConstants,
    pub prior: CstrPrior,
    pub initial: CstrInitial,
    pub measurement: CstrMeasurement,
    pub action: CstrAction,
}

impl Default for CstrParams {
    fn default() -> Self {
        #[derive(Deserialize)]
        struct File {
            #[allow(dead_code)]
            kind: String,
            #[serde(flatten)]
            params: CstrParams,
        }
        toml::from_str::<File>(DEFAULT_CONFIG)
            .expect("bundled CSTR config parses")
            .params
    }
}

#[derive(Debug, Clone)]
pub struct Cstr {
    pub params: CstrParams,
    pub bounds: ActionBounds,
    log_norm: f64,
}

impl Cstr {
    pub const STATE_DIM: usize = 4;
    pub const ACTION_DIM: usize = 2;
    pub const CB: usize = 1;

    pub fn new(params: CstrParams) -> Result<Self> {
        let bad = |m: &str| Err(Error::InvalidModel(format!("cstr: {m}")));
        if !(params.dt > 0.0) {
            return bad("dt must be positive");
        }
        if params.substeps == 0 {
            return bad("substeps must be >= 1");
        }
        for (name, r) in [("alpha", params.prior.alpha), ("beta", params.prior.beta)] {
            if !(r[0] > 0.0 && r[1] >= r[0]) {
                return bad(&format!("prior.{name} must be a positive interval"));
            }
        }
        if params.measurement.std.iter().any(|&s| !(s > 0.0)) {
            return bad("measurement.std entries must be positive");
        }
        if params.initial.half_width.iter().any(|&h| h < 0.0) {
            return bad("initial.half_width entries must be nonnegative");
        }
        let bounds = ActionBounds::new(
            DVector::from_row_slice(&params.action.low),
            DVector::from_row_slice(&params.action.high),
        )?;
        let log_norm = -params
            .measurement
            .std
            .iter()
            .map(|s| s.ln() + 0.5 * (2.0 * std::f64::consts::PI).ln())
            .sum::<f64>();
        Ok(Self {
            params,
            bounds,
            log_norm,
        })
    }

    pub fn nominal_psi(&self) -> ScenarioParams {
        let mid = |r: [f64; 2]| 0.5 * (r[0] + r[1]);
        ScenarioParams {
            alpha: mid(self.params.prior.alpha),
            beta: mid(self.params.prior.beta),
        }
    }

    pub fn sample_psi(&self, rng: &mut Rng) -> ScenarioParams {
        let draw = |rng: &mut Rng, r: [f64; 2]| {
            if r[1] > r[0] {
                rng.random_range(r[0]..r[1])
            } else {
                r[0]
            }
        };
        let alpha = draw(rng, self.params.prior.alpha);
        let beta = draw(rng, self.params.prior.beta);
        ScenarioParams { alpha, beta }
    }

    pub fn psi_in_support(&self, psi: &ScenarioParams) -> bool {
        let inside = |v: f64, r: [f64; 2]| v >= r[0] && v <= r[1];
        inside(psi.alpha, self.params.prior.alpha) && inside(psi.beta, self.params.prior.beta)
    }

    pub fn clamp_psi(&self, psi: ScenarioParams) -> ScenarioParams {
        let p = &self.params.prior;
        ScenarioParams {
            alpha: psi.alpha.clamp(p.alpha[0], p.alpha[1]),
            beta: psi.beta.clamp(p.beta[0], p.beta[1]),
        }
    }

    pub fn sample_initial_state(&self, rng: &mut Rng) -> DVector<f64> {
        let init = &self.params.initial;
        DVector::from_fn(4, |i, _| {
            let h = init.half_width[i];
            if h > 0.0 {
                init.center[i] + rng.random_range(-h..h)
            } else {
                init.center[i]
            }
        })
    }

    /// Reaction-kinetics right-hand side.
    pub fn rhs<S: Scalar>(&self, x: &[S], u: &[S], psi: ScenarioParams) -> Vec<S> {
        let k = &self.params.constants;
        let c = S::cst;
        let (ca, cb, tr, tk) = (x[0], x[1], x[2], x[3]);
        let (flow, qdot) = (u[0], u[1]);
        // Arrhenius terms use an absolute-temperature floor so nonphysical
        // excursions stay finite.
        let t_abs = (tr + c(KELVIN)).clamp_below(1.0);
        let k1 = c(psi.beta * k.k0_ab) * (c(-k.e_ab) / t_abs).exp();
        let k2 = c(k.k0_bc) * (c(-k.e_bc) / t_abs).exp();
        let k3 = c(k.k0_ad) * (c(-psi.alpha * k.e_ad) / t_abs).exp();
        let ca2 = ca * ca;
        let d_ca = flow * (c(k.c_a0) - ca) - k1 * ca - k3 * ca2;
        let d_cb = -flow * cb + k1 * ca - k2 * cb;
        let heat = (k1 * ca * c(k.h_ab) + k2 * cb * c(k.h_bc) + k3 * ca2 * c(k.h_ad))
            / c(-k.rho * k.cp);
        let d_tr = heat
            + flow * (c(k.t_in) - tr)
            + c(k.k_w * k.area / (k.rho * k.cp * k.volume)) * (tk - tr);
        let d_tk = (qdot + c(k.k_w * k.area) * (tr - tk)) / c(k.coolant_mass * k.cp_k);
        vec![d_ca, d_cb, d_tr, d_tk]
    }

    /// One `dt` of RK4 substeps, clamping concentrations at zero after each.
    pub fn step<S: Scalar>(&self, x: &[S], u: &[S], psi: ScenarioParams) -> Vec<S> {
        self.step_with(x, u, psi, self.params.dt / self.params.substeps as f64, self.params.substeps)
    }

    pub(crate) fn step_with<S: Scalar>(
        &self,
        x: &[S],
        u: &[S],
        psi: ScenarioParams,
        h: f64,
        substeps: usize,
    ) -> Vec<S> {
        let mut s = x.to_vec();
        for _ in 0..substeps {
            s = rk4(&s, h, |z| self.rhs(z, u, psi));
            s[0] = s[0].clamp_below(0.0);
            s[1] = s[1].clamp_below(0.0);
        }
        s
    }

    pub fn transition(&self, x: &DVector<f64>, u: &DVector<f64>, psi: ScenarioParams) -> Result<DVector<f64>> {
        let u = self.bounds.clip(u);
        let next = self.step(x.as_slice(), u.as_slice(), psi);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState);
        }
        Ok(DVector::from_vec(next))
    }

    pub fn measure(&self, x: &DVector<f64>, rng: &mut Rng) -> DVector<f64> {
        let std = self.params.measurement.std;
        DVector::from_fn(4, |i, _| x[i] + std[i] * rng.sample::<f64, _>(StandardNormal))
    }

    pub fn measurement_logpdf(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let std = self.params.measurement.std;
        let quad: f64 = (0..4).map(|i| ((y[i] - x[i]) / std[i]).powi(2)).sum();
        self.log_norm - 0.5 * quad
    }

    pub fn measurement_cov(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_iterator(
            4,
            self.params.measurement.std.iter().map(|s| s * s),
        ))
    }
}
