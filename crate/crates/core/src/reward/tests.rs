use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use super::*;
use crate::belief::Particle;
use crate::env::{DoublePendulum, LinearGaussian, PendulumParams};
use crate::rng::seeded;

fn v(xs: &[f64]) -> DVector<f64> {
    DVector::from_row_slice(xs)
}

fn lg1(q: f64, r: f64) -> EnvModel {
    EnvModel::LinearGaussian(LinearGaussian::scalar(1.0, 1.0, q, 1.0, r).unwrap())
}

fn pendulum() -> EnvModel {
    EnvModel::DoublePendulum(DoublePendulum::new(PendulumParams::default()).unwrap())
}

fn box_spec(epsilon: f64, goal: f64) -> RewardSpec {
    RewardSpec::new(
        RewardVariant::MeasurementConditioned {
            epsilon,
            goal_dims: vec![0],
        },
        v(&[goal]),
        None,
    )
    .unwrap()
}

fn scalar_belief(xs: &[f64]) -> ParticleBelief {
    ParticleBelief::uniform(
        xs.iter()
            .map(|&x| Particle {
                state: v(&[x]),
                psi: ScenarioParams::IDENTITY,
            })
            .collect(),
    )
    .unwrap()
}

#[test]
fn gaussian_shaped_peaks_at_goal() {
    let spec = RewardSpec::gaussian_shaped(DMatrix::identity(2, 2), v(&[1.0, -1.0])).unwrap();
    let env = EnvModel::LinearGaussian(
        LinearGaussian::new(
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 1),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
        )
        .unwrap(),
    );
    assert_eq!(spec.stage_reward(&v(&[1.0, -1.0]), &v(&[0.0]), &env).unwrap(), 1.0);
}

#[test]
fn hanging_pendulum_gaussian_reward() {
    let spec = RewardSpec::gaussian_shaped(DMatrix::identity(2, 2), DVector::zeros(6)).unwrap();
    let r = spec
        .stage_reward(&DoublePendulum::rest_state(), &v(&[0.0]), &pendulum())
        .unwrap();
    assert!((r - (-4.0f64).exp()).abs() < 1e-15);
}

#[test]
fn goal_density_at_the_mean() {
    let env = lg1(1.0, 1.0);
    let spec = RewardSpec::new(RewardVariant::GoalDensity, v(&[0.0]), None).unwrap();
    // a x + b u = 0.
    let r = spec.stage_reward(&v(&[0.7]), &v(&[-0.7]), &env).unwrap();
    assert!((r - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-15);
    assert!(matches!(
        spec.stage_reward(&DoublePendulum::rest_state(), &v(&[0.0]), &pendulum()),
        Err(Error::DensityUnavailable(_))
    ));
}

#[test]
fn quadratic_is_negative_cost() {
    let spec = RewardSpec::quadratic(
        DMatrix::from_diagonal_element(1, 1, 2.0),
        DMatrix::from_diagonal_element(1, 1, 4.0),
        v(&[1.0]),
    )
    .unwrap();
    let r = spec.stage_reward(&v(&[3.0]), &v(&[0.5]), &lg1(1.0, 1.0)).unwrap();
    assert_eq!(r, -0.5 * (2.0 * 4.0 + 4.0 * 0.25));
}

#[test]
fn selected_dims_restrict_the_residual() {
    let spec = RewardSpec::new(
        RewardVariant::GaussianShaped {
            m: DMatrix::from_element(1, 1, 400.0),
        },
        v(&[0.0, 0.6, 0.0, 0.0]),
        Some(vec![1]),
    )
    .unwrap();
    let cstr = EnvModel::Cstr(crate::env::Cstr::new(Default::default()).unwrap());
    let x = v(&[5.0, 0.65, 130.0, 120.0]);
    let r = spec.stage_reward(&x, &v(&[10.0, -100.0]), &cstr).unwrap();
    assert!((r - (-0.5f64).exp()).abs() < 1e-12);
}

#[test]
fn invalid_specs_are_rejected() {
    let neg = DMatrix::from_element(1, 1, -1.0);
    assert!(RewardSpec::gaussian_shaped(neg, v(&[0.0])).is_err());
    let eps0 = RewardVariant::Indicator { epsilon: 0.0 };
    assert!(RewardSpec::new(eps0, v(&[0.0]), None).is_err());
    let out_of_range = RewardVariant::MeasurementConditioned {
        epsilon: 0.1,
        goal_dims: vec![3],
    };
    assert!(RewardSpec::new(out_of_range, v(&[0.0]), None).is_err());
    let zero_r = RewardSpec::quadratic(DMatrix::identity(1, 1), DMatrix::zeros(1, 1), v(&[0.0]));
    assert!(zero_r.is_ok());
}

#[test]
fn goal_box_all_inside_and_all_outside() {
    let spec = box_spec(0.05, 0.6);
    let inside = scalar_belief(&[0.58, 0.6, 0.62]);
    assert!((spec.goal_box_density(&inside).unwrap() - 10.0).abs() < 1e-12);
    let outside = scalar_belief(&[0.0, 1.0]);
    assert_eq!(spec.goal_box_density(&outside).unwrap(), 0.0);
}

#[test]
fn measurement_conditioned_reward_matches_kalman_posterior() {
    // Prior N(0.5, 1), a = b = 1, u = -0.3, Σ_ω = 0.5, Σ_ν = 0.2, y' = 0.4.
    let (m0, p0, u, q, r, y) = (0.5, 1.0, -0.3, 0.5, 0.2, 0.4);
    let env = EnvModel::LinearGaussian(
        LinearGaussian::scalar(1.0, 1.0, q, 1.0, r)
            .unwrap()
            .with_initial(v(&[m0]), DMatrix::from_element(1, 1, p0))
            .unwrap(),
    );
    let (goal, eps) = (0.3, 0.05);
    let spec = box_spec(eps, goal);
    let p = 10_000;
    let mut rng = seeded(21);
    let b = ParticleBelief::init_from_prior(&env, p, &mut rng).unwrap();
    let (est, post) = spec
        .measurement_conditioned_reward(&b, &v(&[u]), &v(&[y]), &env, &mut rng)
        .unwrap();

    let pred_m = m0 + u;
    let pred_p = p0 + q;
    let k = pred_p / (pred_p + r);
    let post_m = pred_m + k * (y - pred_m);
    let post_s = ((1.0 - k) * pred_p).sqrt();
    let cdf = |z: f64| 0.5 * (1.0 + libm::erf(z / std::f64::consts::SQRT_2));
    let mass = cdf((goal + eps - post_m) / post_s) - cdf((goal - eps - post_m) / post_s);
    let exact = mass / (2.0 * eps);
    let se = (mass * (1.0 - mass) / post.ess()).sqrt() / (2.0 * eps);
    assert!((est - exact).abs() < 3.0 * se, "estimate {est}, exact {exact}, se {se}");
}

#[test]
fn belief_reward_requires_matching_variant() {
    let spec = RewardSpec::gaussian_shaped(DMatrix::identity(1, 1), v(&[0.0])).unwrap();
    let env = lg1(1.0, 1.0);
    let b = scalar_belief(&[0.0]);
    assert!(spec
        .measurement_conditioned_reward(&b, &v(&[0.0]), &v(&[0.0]), &env, &mut seeded(0))
        .is_err());
    let (r, post) = spec
        .belief_reward(&b, &v(&[0.0]), &v(&[0.0]), &env, &mut seeded(0))
        .unwrap();
    let direct = spec.stage_reward(&post.particles()[0].state, &v(&[0.0]), &env).unwrap();
    assert_eq!(r, direct);
}

fn traj(cb: &[f64]) -> Trajectory {
    let states = cb.iter().map(|&c| v(&[1.0, c, 130.0, 120.0])).collect();
    Trajectory::from_states(states, 0.99).unwrap()
}

#[test]
fn time_near_goal_examples() {
    assert_eq!(time_near_goal(&traj(&[0.6; 12]), 1, 0.6, 0.05), 12.0);
    assert_eq!(time_near_goal(&traj(&[]), 1, 0.6, 0.05), 0.0);
    let off = time_near_goal(&traj(&[0.65; 7]), 1, 0.6, 0.05);
    assert!((off - 7.0 * (-0.5f64).exp()).abs() < 1e-12);
}

#[test]
fn reward_config_round_trip() {
    let text = r#"
variant = "gaussian_shaped"
m = [400.0]
goal = [0.0, 0.6, 0.0, 0.0]
dims = [1]
"#;
    let cfg: RewardConfig = toml::from_str(text).unwrap();
    let spec = cfg.build(4, 2).unwrap();
    assert_eq!(spec.dims, Some(vec![1]));
    let again: RewardConfig = toml::from_str(&toml::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(again, cfg);
    assert!(toml::from_str::<RewardConfig>("variant = \"indicator\"\nepsilon = 1\ngoal=[0]\nbogus = 1").is_err());
}

proptest! {
    #[test]
    fn gaussian_shaped_decreases_in_quadratic_form(
        a in prop::collection::vec(-3.0f64..3.0, 2),
        b in prop::collection::vec(-3.0f64..3.0, 2),
        d in prop::collection::vec(0.1f64..5.0, 2),
    ) {
        let m = DMatrix::from_diagonal(&DVector::from_vec(d));
        let spec = RewardSpec::gaussian_shaped(m.clone(), DVector::zeros(2)).unwrap();
        let env = EnvModel::LinearGaussian(LinearGaussian::new(
            DMatrix::identity(2, 2), DMatrix::zeros(2, 1), DMatrix::identity(2, 2),
            DMatrix::identity(2, 2), DMatrix::identity(2, 2)).unwrap());
        let (xa, xb) = (DVector::from_vec(a), DVector::from_vec(b));
        let qa = xa.dot(&(&m * &xa));
        let qb = xb.dot(&(&m * &xb));
        let ra = spec.stage_reward(&xa, &v(&[0.0]), &env).unwrap();
        let rb = spec.stage_reward(&xb, &v(&[0.0]), &env).unwrap();
        prop_assert!(ra.is_finite() && rb.is_finite());
        if qa + 1e-9 < qb && qb < 1400.0 {
            prop_assert!(ra > rb);
        }
    }

    #[test]
    fn gaussian_shaped_approaches_indicator_outside_the_box(x in 0.2f64..3.0) {
        let eps = 0.1;
        let env = lg1(1.0, 1.0);
        let ind = RewardSpec::new(RewardVariant::Indicator { epsilon: eps }, v(&[0.0]), None).unwrap();
        prop_assert_eq!(ind.stage_reward(&v(&[x]), &v(&[0.0]), &env).unwrap(), 0.0);
        let mut prev = f64::INFINITY;
        for c in [1.0, 10.0, 100.0] {
            let g = RewardSpec::gaussian_shaped(DMatrix::from_element(1, 1, c), v(&[0.0])).unwrap();
            let r = g.stage_reward(&v(&[x]), &v(&[0.0]), &env).unwrap();
            prop_assert!(r < prev);
            prev = r;
        }
        prop_assert!(prev <= (-0.5 * 100.0 * 0.04f64).exp());
    }

    #[test]
    fn goal_box_density_is_permutation_invariant(
        xs in prop::collection::vec(0.4f64..0.8, 1..20),
        rot in 0usize..20,
    ) {
        let spec = box_spec(0.05, 0.6);
        let mut ys = xs.clone();
        let k = rot % ys.len();
        ys.rotate_left(k);
        let a = spec.goal_box_density(&scalar_belief(&xs)).unwrap();
        let b = spec.goal_box_density(&scalar_belief(&ys)).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((0.0..=10.0 + 1e-12).contains(&a));
    }
}
