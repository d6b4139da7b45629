use super::*;
use crate::rng::seeded;

fn lg(a: f64, b: f64, q: f64, c: f64, r: f64) -> EnvModel {
    EnvModel::LinearGaussian(LinearGaussian::scalar(a, b, q, c, r).unwrap())
}

fn cstr() -> EnvModel {
    EnvModel::Cstr(Cstr::new(CstrParams::default()).unwrap())
}

fn pendulum() -> EnvModel {
    EnvModel::DoublePendulum(DoublePendulum::new(PendulumParams::default()).unwrap())
}

fn v(xs: &[f64]) -> DVector<f64> {
    DVector::from_row_slice(xs)
}

#[test]
fn point_mass_initial_state_is_exact() {
    let x0 = v(&[1.5, -2.0]);
    let m = LinearGaussian::new(
        DMatrix::identity(2, 2),
        DMatrix::zeros(2, 1),
        DMatrix::identity(2, 2),
        DMatrix::identity(2, 2),
        DMatrix::identity(2, 2),
    )
    .unwrap()
    .with_initial(x0.clone(), DMatrix::zeros(2, 2))
    .unwrap();
    let env = EnvModel::LinearGaussian(m);
    let (x, psi) = env.sample_initial(&mut seeded(3));
    assert_eq!(x, x0);
    assert_eq!(psi, ScenarioParams::IDENTITY);
}

#[test]
fn pendulum_starts_hanging_at_rest() {
    let (x, _) = pendulum().sample_initial(&mut seeded(0));
    assert_eq!(x, v(&[std::f64::consts::PI, std::f64::consts::PI, 0.0, 0.0, 0.0, 0.0]));
}

#[test]
fn cstr_alpha_prior_mean_matches_midpoint() {
    let env = cstr();
    let mut rng = seeded(11);
    let n = 100_000;
    let mean = (0..n).map(|_| env.sample_psi(&mut rng).alpha).sum::<f64>() / n as f64;
    // Uniform on [0.85, 1.15]: sd = 0.3 / sqrt(12).
    let se = 0.3 / 12f64.sqrt() / (n as f64).sqrt();
    assert!((mean - 1.0).abs() < 4.0 * se, "mean {mean}");
}

#[test]
fn identity_dynamics_without_noise() {
    let m = LinearGaussian::new(
        DMatrix::identity(3, 3),
        DMatrix::zeros(3, 2),
        DMatrix::zeros(3, 3),
        DMatrix::identity(3, 3),
        DMatrix::identity(3, 3),
    )
    .unwrap();
    let env = EnvModel::LinearGaussian(m);
    let x = v(&[0.3, -1.0, 7.0]);
    let next = env
        .transition(&x, &v(&[2.0, -3.0]), ScenarioParams::IDENTITY, &mut seeded(1))
        .unwrap();
    assert_eq!(next, x);
}

#[test]
fn hanging_rest_is_an_equilibrium() {
    let env = pendulum();
    let x = DoublePendulum::rest_state();
    let next = env
        .transition(&x, &v(&[0.0]), ScenarioParams::IDENTITY, &mut seeded(0))
        .unwrap();
    assert!((next - x).amax() < 1e-9);
}

/// Independent van de Vusse right-hand side (written out from the
/// constants table) integrated with a fine RK4 grid.
fn fine_cstr_oracle(x: [f64; 4], u: [f64; 2], alpha: f64, beta: f64, dt: f64) -> [f64; 4] {
    let rhs = |s: [f64; 4]| -> [f64; 4] {
        let t = s[2] + 273.15;
        let k1 = beta * 1.287e12 * (-9758.3 / t).exp();
        let k2 = 1.287e12 * (-9758.3 / t).exp();
        let k3 = 9.043e9 * (-alpha * 8560.0 / t).exp();
        [
            u[0] * (5.1 - s[0]) - k1 * s[0] - k3 * s[0] * s[0],
            -u[0] * s[1] + k1 * s[0] - k2 * s[1],
            (k1 * s[0] * 4.2 + k2 * s[1] * -11.0 + k3 * s[0] * s[0] * -41.85) / (-0.9342 * 3.01)
                + u[0] * (130.0 - s[2])
                + 4032.0 * 0.215 * (s[3] - s[2]) / (0.9342 * 3.01 * 10.01),
            (u[1] + 4032.0 * 0.215 * (s[2] - s[3])) / (5.0 * 2.0),
        ]
    };
    let n = 1000;
    let h = dt / n as f64;
    let mut s = x;
    for _ in 0..n {
        let add = |a: [f64; 4], b: [f64; 4], k: f64| std::array::from_fn::<f64, 4, _>(|i| a[i] + k * b[i]);
        let k1 = rhs(s);
        let k2 = rhs(add(s, k1, h / 2.0));
        let k3 = rhs(add(s, k2, h / 2.0));
        let k4 = rhs(add(s, k3, h));
        s = std::array::from_fn(|i| s[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
    }
    s
}

#[test]
fn cstr_step_matches_fine_integration() {
    let env = cstr();
    let x = [0.8, 0.5, 134.14, 130.0];
    let u = [18.83, -4495.7];
    let psi = ScenarioParams { alpha: 1.0, beta: 1.0 };
    let next = env.transition(&v(&x), &v(&u), psi, &mut seeded(0)).unwrap();
    let oracle = fine_cstr_oracle(x, u, 1.0, 1.0, 0.005);
    for i in 0..4 {
        let rel = (next[i] - oracle[i]).abs() / oracle[i].abs();
        assert!(rel < 1e-6, "component {i}: {} vs {}", next[i], oracle[i]);
    }
}

#[test]
fn noiseless_identity_measurement() {
    let env = lg(1.0, 0.0, 1.0, 1.0, 0.0);
    let x = v(&[0.42]);
    assert_eq!(env.measure(&x, &mut seeded(2)), x);
}

#[test]
fn measurement_noise_covariance() {
    let cov = DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.2, 0.3]);
    let m = LinearGaussian::new(
        DMatrix::identity(2, 2),
        DMatrix::zeros(2, 1),
        DMatrix::identity(2, 2),
        DMatrix::identity(2, 2),
        cov.clone(),
    )
    .unwrap();
    let env = EnvModel::LinearGaussian(m);
    let x = v(&[1.0, -1.0]);
    let mut rng = seeded(5);
    let n = 100_000;
    let ys: Vec<_> = (0..n).map(|_| env.measure(&x, &mut rng) - &x).collect();
    let mean = ys.iter().fold(DVector::zeros(2), |a, y| a + y) / n as f64;
    let emp = ys
        .iter()
        .fold(DMatrix::zeros(2, 2), |a, y| a + (y - &mean) * (y - &mean).transpose())
        / (n - 1) as f64;
    for i in 0..2 {
        for j in 0..2 {
            assert!((emp[(i, j)] - cov[(i, j)]).abs() <= 0.02 * cov[(i, j)].abs(), "{emp}");
        }
    }
}

#[test]
fn pendulum_is_fully_observed() {
    let env = pendulum();
    let x = v(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
    assert_eq!(env.measure(&x, &mut seeded(0)), x);
}

#[test]
fn standard_normal_transition_density() {
    let env = lg(0.0, 0.0, 1.0, 1.0, 1.0);
    let lp = env
        .transition_logpdf(&v(&[3.0]), &v(&[1.0]), ScenarioParams::IDENTITY, &v(&[0.0]))
        .unwrap();
    assert!((lp - (-0.918_938_533_204_672_7)).abs() < 1e-14);
}

#[test]
fn unit_noise_density_at_goal() {
    let a = DMatrix::from_row_slice(2, 2, &[1.1, 0.3, -0.2, 0.9]);
    let b = DMatrix::from_row_slice(2, 1, &[0.5, 1.0]);
    let m = LinearGaussian::new(
        a.clone(),
        b.clone(),
        DMatrix::identity(2, 2),
        DMatrix::identity(2, 2),
        DMatrix::identity(2, 2),
    )
    .unwrap();
    let env = EnvModel::LinearGaussian(m);
    let x = v(&[0.7, -1.2]);
    let u = v(&[0.4]);
    let density = env
        .transition_logpdf(&x, &u, ScenarioParams::IDENTITY, &DVector::zeros(2))
        .unwrap()
        .exp();
    let mean = &a * &x + &b * &u;
    let direct = (2.0 * std::f64::consts::PI).powi(-1) * (-0.5 * mean.norm_squared()).exp();
    assert!((density - direct).abs() < 1e-15);
}

#[test]
fn deterministic_kinds_have_no_transition_density() {
    let x = v(&[0.8, 0.5, 130.0, 130.0]);
    let err = cstr()
        .transition_logpdf(&x, &v(&[10.0, -100.0]), ScenarioParams::IDENTITY, &x)
        .unwrap_err();
    assert!(matches!(err, Error::DensityUnavailable(_)));
}

#[test]
fn measurement_likelihood_peaks_at_the_mean() {
    let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
    let m = LinearGaussian::new(
        DMatrix::identity(2, 2),
        DMatrix::zeros(2, 1),
        DMatrix::identity(2, 2),
        DMatrix::identity(2, 2),
        cov.clone(),
    )
    .unwrap();
    let env = EnvModel::LinearGaussian(m);
    let x = v(&[0.3, 0.1]);
    let lp = env.measurement_logpdf(&x, &x).unwrap();
    let expected = -(2.0 * std::f64::consts::PI).ln() - 0.5 * cov.determinant().ln();
    assert!((lp - expected).abs() < 1e-14);
}

#[test]
fn scalar_measurement_likelihood() {
    let env = lg(1.0, 0.0, 1.0, 1.0, 4.0);
    let lp = env.measurement_logpdf(&v(&[1.0]), &v(&[3.0])).unwrap();
    let expected = -(2.0 * (2.0 * std::f64::consts::PI).sqrt()).ln() - 0.5;
    assert!((lp - expected).abs() < 1e-14);
}

#[test]
fn isotropic_likelihood_depends_only_on_residual_norm() {
    let m = LinearGaussian::new(
        DMatrix::identity(2, 2),
        DMatrix::zeros(2, 1),
        DMatrix::identity(2, 2),
        DMatrix::identity(2, 2),
        DMatrix::identity(2, 2) * 0.7,
    )
    .unwrap();
    let env = EnvModel::LinearGaussian(m);
    let y = v(&[0.0, 0.0]);
    let a = env.measurement_logpdf(&v(&[3.0, 4.0]), &y).unwrap();
    let b = env.measurement_logpdf(&v(&[5.0, 0.0]), &y).unwrap();
    assert!((a - b).abs() < 1e-14);
}

#[test]
fn identical_seeds_give_identical_rollouts() {
    for env in [cstr(), pendulum(), lg(0.9, 1.0, 0.5, 1.0, 0.2)] {
        let run = |seed| {
            let mut rng = seeded(seed);
            let (mut x, psi) = env.sample_initial(&mut rng);
            let mut out = Vec::new();
            for t in 0..20 {
                let u = DVector::from_fn(env.action_dim(), |i, _| {
                    let b = env.bounds();
                    let (lo, hi) = (b.low[i].max(-1.0), b.high[i].min(1.0));
                    lo + (hi - lo) * ((t * 7 + i) % 5) as f64 / 4.0
                });
                x = env.transition(&x, &u, psi, &mut rng).unwrap();
                out.push(env.measure(&x, &mut rng));
            }
            out
        };
        let a = run(9);
        let b = run(9);
        assert!(a.iter().zip(&b).all(|(p, q)| p.iter().zip(q.iter()).all(|(x, y)| x.to_bits() == y.to_bits())));
    }
}

#[test]
fn sampled_transitions_match_density_moments() {
    let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]);
    let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.0, 0.8]);
    let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
    let m = LinearGaussian::new(a.clone(), b.clone(), cov.clone(), DMatrix::identity(2, 2), DMatrix::identity(2, 2)).unwrap();
    let env = EnvModel::LinearGaussian(m);
    let x = v(&[1.0, 2.0]);
    let u = v(&[-0.5]);
    let mean = &a * &x + &b * &u;
    let mut rng = seeded(21);
    let n = 100_000;
    let xs: Vec<_> = (0..n)
        .map(|_| env.transition(&x, &u, ScenarioParams::IDENTITY, &mut rng).unwrap())
        .collect();
    let emp_mean = xs.iter().fold(DVector::zeros(2), |acc, s| acc + s) / n as f64;
    let emp_cov = xs
        .iter()
        .fold(DMatrix::zeros(2, 2), |acc, s| acc + (s - &emp_mean) * (s - &emp_mean).transpose())
        / (n - 1) as f64;
    for i in 0..2 {
        assert!((emp_mean[i] - mean[i]).abs() <= 0.02 * mean[i].abs().max(cov[(i, i)].sqrt()));
        for j in 0..2 {
            assert!((emp_cov[(i, j)] - cov[(i, j)]).abs() <= 0.02 * cov[(i, j)].abs());
        }
    }
}

#[test]
fn pendulum_energy_is_conserved() {
    let EnvModel::DoublePendulum(p) = pendulum() else { unreachable!() };
    let env = EnvModel::DoublePendulum(p.clone());
    let mut x = v(&[2.0, -2.5, 1.0, -3.0, 0.0, 0.5]);
    let e0 = p.energy(&x);
    assert!(e0 > 1.0);
    for _ in 0..75 {
        x = env.transition(&x, &v(&[0.0]), ScenarioParams::IDENTITY, &mut seeded(0)).unwrap();
    }
    let drift = (p.energy(&x) - e0).abs() / e0;
    assert!(drift < 1e-3, "relative energy drift {drift}");
}

#[test]
fn pendulum_jacobian_matches_finite_differences() {
    let EnvModel::DoublePendulum(p) = pendulum() else { unreachable!() };
    let x = v(&[2.9, -0.4, 1.3, -2.0, 0.2, -0.7]);
    let u = v(&[3.5]);
    let (_, jx, ju) = p.step_with_jacobian(&x, &u).unwrap();
    let h = 1e-6;
    let f = |x: &DVector<f64>, u: f64| DVector::from_vec(p.step(x.as_slice(), u));
    for j in 0..6 {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let col = (f(&xp, u[0]) - f(&xm, u[0])) / (2.0 * h);
        assert!((col - jx.column(j)).amax() < 1e-6);
    }
    let col = (f(&x, u[0] + h) - f(&x, u[0] - h)) / (2.0 * h);
    assert!((col - ju.column(0)).amax() < 1e-6);
}

#[test]
fn out_of_bounds_actions_are_clipped() {
    let env = pendulum();
    let x = DoublePendulum::rest_state();
    let limit = env.bounds().high[0];
    let a = env.transition(&x, &v(&[1e6]), ScenarioParams::IDENTITY, &mut seeded(0)).unwrap();
    let b = env.transition(&x, &v(&[limit]), ScenarioParams::IDENTITY, &mut seeded(0)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn env_config_files_parse() {
    for text in [
        include_str!("../../../../configs/env/cstr.toml"),
        include_str!("../../../../configs/env/double_pendulum.toml"),
        include_str!("../../../../configs/env/linear_gaussian.toml"),
    ] {
        let cfg: EnvConfig = toml::from_str(text).unwrap();
        EnvModel::from_config(&cfg).unwrap();
    }
}
