//! Double inverted pendulum on a cart.
//!
//! Point masses sit at the link tips; angles are measured from the upright
//! vertical so `1 - cos(theta)` vanishes at the goal. With generalized
//! coordinates `q = (cart, theta1, theta2)` the Lagrangian dynamics read
//! `D(q) q'' + C(q, q') q' + G(q) = (u, 0, 0)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::scalar::{rk4, Dual, Scalar};
use super::ActionBounds;
use crate::error::{Error, Result};

const DEFAULT_CONFIG: &str = include_str!("../../../../configs/env/double_pendulum.toml");

/// Parameter file schema (`configs/env/double_pendulum.toml`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PendulumParams {
    pub cart_mass: f64,
    pub mass1: f64,
    pub mass2: f64,
    pub length1: f64,
    pub length2: f64,
    pub gravity: f64,
    pub dt: f64,
    pub substeps: usize,
    pub force_limit: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        #[derive(Deserialize)]
        struct File {
            #[allow(dead_code)]
            kind: String,
            #[serde(flatten)]
            params: PendulumParams,
        }
        toml::from_str::<File>(DEFAULT_CONFIG)
            .expect("bundled pendulum config parses")
            .params
    }
}

#[derive(Debug, Clone)]
pub struct DoublePendulum {
    pub params: PendulumParams,
    pub bounds: ActionBounds,
}

fn solve3<S: Scalar>(m: [[S; 3]; 3], r: [S; 3]) -> [S; 3] {
    let det = |m: &[[S; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(&m);
    let mut out = [S::cst(0.0); 3];
    for (col, o) in out.iter_mut().enumerate() {
        let mut mc = m;
        for row in 0..3 {
            mc[row][col] = r[row];
        }
        *o = det(&mc) / d;
    }
    out
}

impl DoublePendulum {
    pub const STATE_DIM: usize = 6;
    pub const ACTION_DIM: usize = 1;

    pub fn new(params: PendulumParams) -> Result<Self> {
        let p = &params;
        let positive = [
            p.cart_mass, p.mass1, p.mass2, p.length1, p.length2, p.gravity, p.dt, p.force_limit,
        ];
        if positive.iter().any(|&v| !(v > 0.0)) || p.substeps == 0 {
            return Err(Error::InvalidModel(
                "double pendulum: masses, lengths, gravity, dt, force_limit must be positive and substeps >= 1"
                    .into(),
            ));
        }
        let bounds = ActionBounds::symmetric(1, params.force_limit);
        Ok(Self { params, bounds })
    }

    /// Hanging at rest.
    pub fn rest_state() -> DVector<f64> {
        DVector::from_vec(vec![std::f64::consts::PI, std::f64::consts::PI, 0.0, 0.0, 0.0, 0.0])
    }

    pub fn rhs<S: Scalar>(&self, x: &[S], force: S) -> Vec<S> {
        let p = &self.params;
        let c = S::cst;
        let (th1, th2, w1, w2, _pos, vel) = (x[0], x[1], x[2], x[3], x[4], x[5]);
        let d1 = p.cart_mass + p.mass1 + p.mass2;
        let d2 = (p.mass1 + p.mass2) * p.length1;
        let d3 = p.mass2 * p.length2;
        let d4 = (p.mass1 + p.mass2) * p.length1 * p.length1;
        let d5 = p.mass2 * p.length1 * p.length2;
        let d6 = p.mass2 * p.length2 * p.length2;
        let f1 = (p.mass1 + p.mass2) * p.length1 * p.gravity;
        let f2 = p.mass2 * p.length2 * p.gravity;
        let (s1, c1) = (th1.sin(), th1.cos());
        let (s2, c2) = (th2.sin(), th2.cos());
        let s12 = (th1 - th2).sin();
        let c12 = (th1 - th2).cos();
        let mass = [
            [c(d1), c(d2) * c1, c(d3) * c2],
            [c(d2) * c1, c(d4), c(d5) * c12],
            [c(d3) * c2, c(d5) * c12, c(d6)],
        ];
        let rhs = [
            force + c(d2) * s1 * w1 * w1 + c(d3) * s2 * w2 * w2,
            -c(d5) * s12 * w2 * w2 + c(f1) * s1,
            c(d5) * s12 * w1 * w1 + c(f2) * s2,
        ];
        let acc = solve3(mass, rhs);
        // acc = [cart, theta1, theta2]
        vec![w1, w2, acc[1], acc[2], vel, acc[0]]
    }

    pub fn step<S: Scalar>(&self, x: &[S], force: S) -> Vec<S> {
        let h = self.params.dt / self.params.substeps as f64;
        let mut s = x.to_vec();
        for _ in 0..self.params.substeps {
            s = rk4(&s, h, |z| self.rhs(z, force));
        }
        s
    }

    pub fn transition(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        let u = self.bounds.clip(u);
        let next = self.step(x.as_slice(), u[0]);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState);
        }
        Ok(DVector::from_vec(next))
    }

    /// Next state with exact Jacobians w.r.t. state and force. The force is
    /// not clipped here; differentiable callers squash it themselves.
    pub fn step_with_jacobian(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>)> {
        let xs: Vec<Dual<7>> = (0..6).map(|i| Dual::variable(x[i], i)).collect();
        let next = self.step(&xs, Dual::variable(u[0], 6));
        if next.iter().any(|v| !v.v.is_finite() || v.d.iter().any(|d| !d.is_finite())) {
            return Err(Error::NonFiniteState);
        }
        let value = DVector::from_iterator(6, next.iter().map(|v| v.v));
        let jx = DMatrix::from_fn(6, 6, |r, c| next[r].d[c]);
        let ju = DMatrix::from_fn(6, 1, |r, _| next[r].d[6]);
        Ok((value, jx, ju))
    }

    /// Mechanical energy, zero when hanging at rest.
    pub fn energy(&self, x: &DVector<f64>) -> f64 {
        let p = &self.params;
        let (th1, th2, w1, w2, v) = (x[0], x[1], x[2], x[3], x[5]);
        let vx1 = v + p.length1 * th1.cos() * w1;
        let vy1 = -p.length1 * th1.sin() * w1;
        let vx2 = vx1 + p.length2 * th2.cos() * w2;
        let vy2 = vy1 - p.length2 * th2.sin() * w2;
        let kinetic = 0.5 * p.cart_mass * v * v
            + 0.5 * p.mass1 * (vx1 * vx1 + vy1 * vy1)
            + 0.5 * p.mass2 * (vx2 * vx2 + vy2 * vy2);
        let height1 = p.length1 * th1.cos();
        let height2 = height1 + p.length2 * th2.cos();
        let potential = p.gravity * (p.mass1 * height1 + p.mass2 * height2);
        let rest = -p.gravity * (p.mass1 * p.length1 + p.mass2 * (p.length1 + p.length2));
        kinetic + potential - rest
    }
}
