use nalgebra::{DMatrix, DVector};

use crate::env::LinearGaussian;
use crate::error::{Error, Result};

/// Posterior mean and covariance after processing one time step.
pub type GaussianBelief = (DVector<f64>, DMatrix<f64>);

/// Exact filter for linear-Gaussian systems.
///
/// Step `t` starts from the model's initial distribution when `t = 0` and
/// otherwise predicts with `actions[t - 1]`. It then conditions on
/// `observations[t]` when present. A `None` observation skips the update, so
/// an all-`None` sequence gives the open-loop covariance recursion
/// `Σ ← A Σ Aᵀ + Σ_ω`.
pub fn kalman_filter(
    model: &LinearGaussian,
    observations: &[Option<DVector<f64>>],
    actions: &[DVector<f64>],
) -> Result<Vec<GaussianBelief>> {
    if !observations.is_empty() && actions.len() + 1 < observations.len() {
        return Err(Error::ShapeMismatch {
            expected: observations.len() - 1,
            got: actions.len(),
        });
    }
    let n = model.state_dim();
    let q = model.process().cov();
    let r = model.measurement().cov();
    let c = &model.c;
    let mut mean = model.init_mean.clone();
    let mut cov = model.initial().cov().clone();
    let mut out = Vec::with_capacity(observations.len());
    for (t, y) in observations.iter().enumerate() {
        if t > 0 {
            let u = &actions[t - 1];
            if u.len() != model.action_dim() {
                return Err(Error::ShapeMismatch {
                    expected: model.action_dim(),
                    got: u.len(),
                });
            }
            mean = model.mean_next(&mean, u);
            cov = &model.a * &cov * model.a.transpose() + q;
        }
        if let Some(y) = y {
            if y.len() != model.obs_dim() {
                return Err(Error::ShapeMismatch {
                    expected: model.obs_dim(),
                    got: y.len(),
                });
            }
            let s = c * &cov * c.transpose() + r;
            let s_inv = s.cholesky().ok_or(Error::SingularInnovation)?.inverse();
            let gain = &cov * c.transpose() * s_inv;
            mean += &gain * (y - c * &mean);
            // Joseph form keeps the covariance symmetric PSD.
            let i_kc = DMatrix::identity(n, n) - &gain * c;
            cov = &i_kc * &cov * i_kc.transpose() + &gain * r * gain.transpose();
            cov = (&cov + cov.transpose()) * 0.5;
        }
        out.push((mean.clone(), cov.clone()));
    }
    Ok(out)
}

const RICCATI_TOL: f64 = 1e-12;
const RICCATI_MAX_ITER: usize = 1_000_000;

/// Discounted LQR gain for `min Σ γ^t (xᵀQx + uᵀRu)` with `u = −K x`.
///
/// Iterates `P ← Q + γAᵀPA − γ²AᵀPB (R + γBᵀPB)⁻¹ BᵀPA` from `P = Q` until the
/// largest entry change is below `1e−12 · max(1, |P|max)`.
pub fn dlqr(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    gamma: f64,
) -> Result<DMatrix<f64>> {
    dlqr_with_cost(a, b, q, r, gamma).map(|(k, _)| k)
}

/// Like [`dlqr`], also returning the cost-to-go matrix `P`.
pub fn dlqr_with_cost(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    gamma: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    let m = b.ncols();
    if !a.is_square() || b.nrows() != n || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(Error::InvalidArgument("dlqr: inconsistent matrix shapes".into()));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidArgument(format!("dlqr: γ must lie in (0, 1], got {gamma}")));
    }
    let gain = |p: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let btp = b.transpose() * p;
        let s = r + gamma * &btp * b;
        let rhs = gamma * btp * a;
        s.lu()
            .solve(&rhs)
            .ok_or_else(|| Error::InvalidArgument("dlqr: R + γBᵀPB is singular".into()))
    };
    let mut p = q.clone();
    for _ in 0..RICCATI_MAX_ITER {
        let k = gain(&p)?;
        // P = Q + γAᵀP(A − BK), the Riccati update written with the current gain.
        let mut next = q + gamma * a.transpose() * &p * (a - b * &k);
        next = (&next + next.transpose()) * 0.5;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonConvergence("dlqr", RICCATI_MAX_ITER));
        }
        let delta = (&next - &p).amax();
        p = next;
        if delta <= RICCATI_TOL * p.amax().max(1.0) {
            return Ok((gain(&p)?, p));
        }
    }
    Err(Error::NonConvergence("dlqr", RICCATI_MAX_ITER))
}
