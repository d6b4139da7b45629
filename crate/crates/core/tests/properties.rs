use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

use goalctl::analysis::kalman_filter;
use goalctl::belief::ParticleBelief;
use goalctl::env::{Cstr, CstrParams, EnvModel, LinearGaussian, ScenarioParams};
use goalctl::rng::{indexed, seeded, substream_seed};

#[test]
fn cstr_rollouts_stay_finite_over_the_action_box_and_prior_support() {
    let cstr = Cstr::new(CstrParams::default()).unwrap();
    let prior = cstr.params.prior.clone();
    let bounds = cstr.bounds.clone();
    let model = EnvModel::Cstr(cstr);
    let seed = substream_seed(0, "cstr-finiteness");
    for i in 0..10_000u64 {
        let mut rng = indexed(seed, i);
        let psi = ScenarioParams {
            alpha: rng.random_range(prior.alpha[0]..=prior.alpha[1]),
            beta: rng.random_range(prior.beta[0]..=prior.beta[1]),
        };
        let mut x = model.sample_initial_state(&mut rng);
        for t in 0..100 {
            let u = DVector::from_fn(2, |k, _| rng.random_range(bounds.low[k]..=bounds.high[k]));
            x = model
                .transition(&x, &u, psi, &mut rng)
                .unwrap_or_else(|e| panic!("rollout {i} step {t}: {e}"));
            assert!(x.iter().all(|v| v.is_finite()), "rollout {i} step {t}: {x}");
            let y = model.measure(&x, &mut rng);
            assert!(y.iter().all(|v| v.is_finite()));
        }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Posterior-mean RMSE of a `p`-particle filter against the exact filter
/// along one simulated trajectory.
fn filter_rmse(lg: &LinearGaussian, p: usize, seed: u64, steps: usize) -> f64 {
    let model = EnvModel::LinearGaussian(lg.clone());
    // Environment draws depend on the seed only, so all particle counts see
    // the same trajectory and observations.
    let mut env = seeded(substream_seed(seed, "env"));
    let mut filt = seeded(substream_seed(seed, &format!("filter/{p}")));
    let actions: Vec<DVector<f64>> = (0..steps).map(|t| DVector::from_element(1, (0.4 * t as f64).sin())).collect();
    let mut x = model.sample_initial_state(&mut env);
    let mut ys = Vec::with_capacity(steps);
    let mut b = ParticleBelief::init_from_prior(&model, p, &mut filt).unwrap();
    let mut means = Vec::with_capacity(steps);
    for t in 0..steps {
        if t > 0 {
            x = model.transition(&x, &actions[t - 1], ScenarioParams::IDENTITY, &mut env).unwrap();
            b = b.predict(&model, &actions[t - 1], &mut filt).unwrap();
        }
        let y = model.measure(&x, &mut env);
        b = b.update(&model, &y).unwrap();
        means.push(b.mean_state());
        b = b.resample_if_needed(&mut filt);
        ys.push(Some(y));
    }
    let exact = kalman_filter(lg, &ys, &actions).unwrap();
    let sq: f64 = means.iter().zip(&exact).map(|(m, (k, _))| (m - k).norm_squared()).sum();
    (sq / steps as f64).sqrt()
}

#[test]
fn filter_error_shrinks_with_particle_count() {
    let lg = LinearGaussian::new(
        DMatrix::from_row_slice(2, 2, &[0.95, 0.1, -0.1, 0.9]),
        DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        DMatrix::from_diagonal_element(2, 2, 0.1),
        DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        DMatrix::from_element(1, 1, 0.25),
    )
    .unwrap()
    .with_initial(DVector::zeros(2), DMatrix::identity(2, 2))
    .unwrap();
    let counts = [100, 1_000, 10_000];
    let medians: Vec<f64> = counts
        .iter()
        .map(|&p| median((0..20).map(|s| filter_rmse(&lg, p, s, 30)).collect()))
        .collect();
    assert!(
        medians.windows(2).all(|w| w[1] <= w[0]),
        "median RMSE by particle count {counts:?}: {medians:?}"
    );
}
