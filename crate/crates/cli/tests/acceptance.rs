//! Acceptance suite. Each criterion is one test, so the test harness prints
//! one `ok` or `FAILED` line per criterion; the measured quantities are
//! written to `<target tmpdir>/acceptance/criterion_NN.txt` and to stderr.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

use goalctl::analysis::{
    belief_grid_value_iteration, dlqr, grid_value_iteration, kalman_filter, score_trajectory, verify_lqr_bound,
    verify_prob_bound, verify_prob_bound_mean_path, BeliefGridSpec, GridSpec, LinearPolicy, RewardPlacement,
    Trajectory,
};
use goalctl::belief::ParticleBelief;
use goalctl::dpc::{rollout_gradient, rollout_loss, DpcObjective, Features, ObjectiveKind};
use goalctl::env::{DoublePendulum, EnvModel, LinearGaussian, PendulumParams, ScenarioParams};
use goalctl::linalg::UniformGrid;
use goalctl::nnopt::bench::KroneckerQuadratic;
use goalctl::nnopt::{relative_error, Adam, AdamParams, Mlp, OptimizerConfig, OptimizerKind, Soap};
use goalctl::reward::{RewardSpec, RewardVariant};
use goalctl::rng::{indexed, seeded, substream_seed};

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn config(rel: &str) -> String {
    repo().join("configs").join(rel).display().to_string()
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn cli(args: &[&str]) -> i32 {
    let mut argv = vec!["goalctl"];
    argv.extend_from_slice(args);
    goalctl_cli::run(argv)
}

/// Collects the measured quantities of one criterion and publishes them.
struct Report {
    id: u32,
    title: &'static str,
    lines: String,
    started: Instant,
    ok: bool,
}

impl Report {
    fn new(id: u32, title: &'static str) -> Self {
        Self {
            id,
            title,
            lines: String::new(),
            started: Instant::now(),
            ok: true,
        }
    }

    fn check(&mut self, ok: bool, what: impl AsRef<str>) {
        let _ = writeln!(self.lines, "  [{}] {}", if ok { "pass" } else { "FAIL" }, what.as_ref());
        self.ok &= ok;
    }

    fn note(&mut self, what: impl AsRef<str>) {
        let _ = writeln!(self.lines, "        {}", what.as_ref());
    }

    fn finish(mut self, budget: Duration) {
        let elapsed = self.started.elapsed();
        self.check(
            elapsed <= budget,
            format!("runtime {:.1}s within {:.0}s", elapsed.as_secs_f64(), budget.as_secs_f64()),
        );
        let text = format!(
            "criterion {:02} {}: {}\n{}",
            self.id,
            self.title,
            if self.ok { "PASS" } else { "FAIL" },
            self.lines
        );
        eprint!("{text}");
        let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join(format!("criterion_{:02}.txt", self.id)), &text).unwrap();
        assert!(self.ok, "{text}");
    }
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("").split(',').map(str::to_string).collect();
    let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    (header, rows)
}

fn column<'a>(header: &[String], rows: &'a [Vec<String>], name: &str) -> Vec<&'a str> {
    let i = header.iter().position(|h| h == name).unwrap_or_else(|| panic!("missing column {name}"));
    rows.iter().map(|r| r[i].as_str()).collect()
}

fn floats(v: &[&str]) -> Vec<f64> {
    v.iter().map(|s| s.parse::<f64>().unwrap()).collect()
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn random_spd(n: usize, rng: &mut goalctl::rng::Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &g * g.transpose() + DMatrix::from_diagonal_element(n, n, 0.1)
}

/// A random controllable planar system with SPD noise.
fn random_system(rng: &mut goalctl::rng::Rng) -> LinearGaussian {
    let a = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
    let b = DMatrix::from_fn(2, 2, |i, j| if i == j { 1.0 } else { 0.0 } + rng.random_range(-0.3..0.3));
    let q = random_spd(2, rng) * 0.3;
    let x0 = DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
    LinearGaussian::new(a, b, q, DMatrix::identity(2, 2), DMatrix::identity(2, 2))
        .unwrap()
        .with_initial(x0, DMatrix::identity(2, 2) * 0.5)
        .unwrap()
}

#[test]
fn criterion_01_jensen_property_suite() {
    let mut r = Report::new(1, "per-trajectory Jensen bound on linear-Gaussian systems");
    let seed = substream_seed(1, "acceptance/jensen");
    let (mut worst_slack, mut gamma_lo, mut gamma_hi) = (f64::INFINITY, 1.0f64, 0.0f64);
    let draws = 1000;
    for i in 0..draws {
        let mut rng = indexed(seed, i);
        let lg = random_system(&mut rng);
        let gain = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.5..1.5));
        let gamma = rng.random_range(0.05..0.99);
        gamma_lo = gamma_lo.min(gamma);
        gamma_hi = gamma_hi.max(gamma);
        let env = EnvModel::LinearGaussian(lg);
        let rep = verify_prob_bound(&LinearPolicy::new(gain), &env, gamma, 1, 50, &mut rng).unwrap();
        worst_slack = worst_slack.min(rep.min_trajectory_slack);
    }
    r.check(
        worst_slack >= -1e-12,
        format!("{draws} random (system, policy, trajectory, γ ∈ [{gamma_lo:.2}, {gamma_hi:.2}]) draws: smallest slack {worst_slack:.3e} ≥ −1e−12"),
    );

    // Constant trajectories: u = B⁻¹(I − A)x holds the noise-free path still.
    let mut worst_gap: f64 = 0.0;
    for i in 0..50 {
        let mut rng = indexed(seed ^ 0xC0, i);
        let lg = random_system(&mut rng);
        let gain = -(lg.b.clone().try_inverse().unwrap() * (DMatrix::identity(2, 2) - &lg.a));
        let x0 = DVector::from_fn(2, |_, _| rng.random_range(-3.0..3.0));
        let gamma = rng.random_range(0.1..0.99);
        let env = EnvModel::LinearGaussian(lg);
        let rep = verify_prob_bound_mean_path(&LinearPolicy::new(gain), &env, &x0, gamma, 80).unwrap();
        worst_gap = worst_gap.max(rep.gap.abs());
    }
    r.check(worst_gap <= 1e-9, format!("constant trajectories: largest |rhs − lhs| {worst_gap:.3e} ≤ 1e−9"));

    let out = scratch("c01");
    let code = cli(&["verify-thm1", "--config", &config("verify/thm1.toml"), "--seeds", "0..99", "--out", out.to_str().unwrap()]);
    let (h, rows) = read_csv(&out.join("bounds.csv"));
    let holds = column(&h, &rows, "holds");
    r.check(
        code == 0 && rows.len() == 100 && holds.iter().all(|v| *v == "true"),
        format!("verify-thm1 --seeds 0..99: exit {code}, {} rows, {} hold", rows.len(), holds.iter().filter(|v| **v == "true").count()),
    );
    r.finish(Duration::from_secs(60));
}

#[test]
fn criterion_02_sparsity_arithmetic() {
    let mut r = Report::new(2, "far-then-goal trajectory scores");
    let gamma: f64 = 0.9;
    let far = 5;
    let mut states = vec![DVector::from_vec(vec![10.0, 0.0]); far];
    states.extend(vec![DVector::zeros(2); 3000]);
    let (classical, goal) = score_trajectory(&Trajectory::from_states(states, gamma).unwrap()).unwrap();
    let expected = gamma.powi(far as i32) / (1.0 - gamma);
    r.check(
        (goal - expected).abs() < 1e-6,
        format!("goal objective {goal:.9} vs γ^T/(1−γ) = {expected:.9}"),
    );
    r.check(classical <= (-50.0f64).exp(), format!("classical objective {classical:.3e} ≤ e^−50"));
    r.finish(Duration::from_secs(10));
}

#[test]
fn criterion_03_quadratic_bound_suite() {
    let mut r = Report::new(3, "quadratic-cost bound for random SPD weights and stabilizing policies");
    let seed = substream_seed(3, "acceptance/quadratic");
    let draws = 1000;
    let (mut held, mut worst_slack, mut rhs_moved, mut unstable) = (0, f64::INFINITY, 0usize, 0usize);
    for i in 0..draws {
        let mut rng = indexed(seed, i);
        let lg = random_system(&mut rng);
        // Discounted LQR for random SPD costs is stabilizing for these
        // fully actuated systems.
        let gain = dlqr(&lg.a, &lg.b, &random_spd(2, &mut rng), &random_spd(2, &mut rng), 1.0).unwrap();
        let closed = &lg.a - &lg.b * &gain;
        let radius = closed.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
        unstable += usize::from(radius >= 1.0);
        let (m, rr) = (random_spd(2, &mut rng), random_spd(2, &mut rng));
        let gamma = rng.random_range(0.5..0.99);
        let env = EnvModel::LinearGaussian(lg);
        let policy = LinearPolicy::new(gain);
        let rollout_seed: u64 = rng.random();
        let a = verify_lqr_bound(&policy, &env, &m, &rr, gamma, 4, 60, &mut seeded(rollout_seed)).unwrap();
        let b = verify_lqr_bound(&policy, &env, &m, &(&rr * 25.0), gamma, 4, 60, &mut seeded(rollout_seed)).unwrap();
        held += usize::from(a.holds && b.holds);
        worst_slack = worst_slack.min(a.min_trajectory_slack).min(b.min_trajectory_slack);
        rhs_moved += usize::from(a.rhs != b.rhs || b.lhs > a.lhs);
    }
    r.check(unstable == 0, format!("{unstable} of {draws} closed loops have spectral radius ≥ 1"));
    r.check(held as u64 == draws, format!("{held}/{draws} draws hold (R and 25·R)"));
    r.check(worst_slack >= -1e-12, format!("smallest per-trajectory slack {worst_slack:.3e}"));
    r.check(
        rhs_moved == 0,
        format!("scaling R by 25 left the right side bit-identical and did not raise the left side in all but {rhs_moved} draws"),
    );
    let out = scratch("c03");
    let code = cli(&["verify-cor2", "--config", &config("verify/cor2.toml"), "--seeds", "0..9", "--out", out.to_str().unwrap()]);
    let (h, rows) = read_csv(&out.join("bounds.csv"));
    let holds = column(&h, &rows, "holds");
    r.check(
        code == 0 && rows.len() == 30 && holds.iter().all(|v| *v == "true"),
        format!("verify-cor2 --seeds 0..9 over 3 R scales: exit {code}, {} rows, all hold", rows.len()),
    );
    r.finish(Duration::from_secs(120));
}

#[test]
fn criterion_04_goal_policy_beats_lqr() {
    let mut r = Report::new(4, "grid-DP goal-oriented policy vs LQR under the goal objective");
    let out = scratch("c04");
    let code = cli(&["corollary1-study", "--config", &config("study/corollary1.toml"), "--out", out.to_str().unwrap()]);
    r.check(code == 0, format!("corollary1-study exit code {code}"));
    let (h, rows) = read_csv(&out.join("study.csv"));
    for (i, row) in rows.iter().enumerate() {
        let get = |c: &str| row[h.iter().position(|x| x == c).unwrap()].parse::<f64>().unwrap();
        let (dp, lqr, gap, se) = (get("dp_value"), get("lqr_value"), get("gap"), get("gap_stderr"));
        r.check(
            gap > 3.0 * se,
            format!("row {i}: J(dp) {dp:.5}, J(lqr) {lqr:.5}, gap {gap:.4e} > 3 × {se:.2e}"),
        );
    }
    r.check(!rows.is_empty(), "study produced at least one row");
    r.finish(Duration::from_secs(300));
}

fn particle_rmse(lg: &LinearGaussian, p: usize, seed: u64, steps: usize) -> f64 {
    let model = EnvModel::LinearGaussian(lg.clone());
    let mut env = seeded(substream_seed(seed, "env"));
    let mut filt = seeded(substream_seed(seed, &format!("filter/{p}")));
    let actions: Vec<DVector<f64>> = (0..steps).map(|t| DVector::from_element(1, (0.3 * t as f64).cos())).collect();
    let mut x = model.sample_initial_state(&mut env);
    let mut b = ParticleBelief::init_from_prior(&model, p, &mut filt).unwrap();
    let (mut ys, mut means) = (Vec::new(), Vec::new());
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
fn criterion_05_filter_fidelity() {
    let mut r = Report::new(5, "particle filter against the Kalman filter");
    let out = scratch("c05");
    let code = cli(&["filter-demo", "--config", &config("filter/linear.toml"), "--out", out.to_str().unwrap()]);
    r.check(code == 0, format!("filter-demo exit code {code}"));
    // Σ_ν = 0.25·I₂ in configs/env/linear_gaussian.toml.
    let tol = 0.05 * 0.5f64.sqrt();
    // The RMSE pools every step of every configured seed. Per-seed values
    // are reported alongside; a single seed can exceed the tolerance when
    // an outlying innovation collapses the effective sample size.
    let manifest = goalctl_cli::manifest::RunManifest::read(&out).unwrap();
    let (mut pooled, mut steps) = (0.0, 0);
    for seed in &manifest.seeds {
        let (h, rows) = read_csv(&out.join(format!("filter_seed{seed}.csv")));
        let cols: Vec<Vec<f64>> =
            ["mean_x0", "mean_x1", "kalman_x0", "kalman_x1"].iter().map(|c| floats(&column(&h, &rows, c))).collect();
        let sq: f64 = (0..rows.len()).map(|t| (cols[0][t] - cols[2][t]).powi(2) + (cols[1][t] - cols[3][t]).powi(2)).sum();
        let min_ess = floats(&column(&h, &rows, "ess")).into_iter().fold(f64::INFINITY, f64::min);
        r.check(rows.len() == 50, format!("seed {seed}: {} steps", rows.len()));
        r.note(format!(
            "seed {seed}: RMSE {:.4}, smallest ESS {min_ess:.0}",
            (sq / rows.len() as f64).sqrt()
        ));
        pooled += sq;
        steps += rows.len();
    }
    let rmse = (pooled / steps as f64).sqrt();
    r.check(
        rmse <= tol,
        format!(
            "p = 10⁴, RMSE over {} seeds × 50 steps {rmse:.4} ≤ 0.05·√tr(Σ_ν) = {tol:.4}",
            manifest.seeds.len()
        ),
    );
    let lg = match EnvModel::from_config(&toml::from_str(&std::fs::read_to_string(config("env/linear_gaussian.toml")).unwrap()).unwrap()).unwrap() {
        EnvModel::LinearGaussian(lg) => lg,
        _ => unreachable!(),
    };
    let counts = [100usize, 1_000, 10_000];
    let medians: Vec<f64> =
        counts.iter().map(|&p| median(&(0..20).map(|s| particle_rmse(&lg, p, s, 50)).collect::<Vec<_>>())).collect();
    r.check(
        medians.windows(2).all(|w| w[1] <= w[0]),
        format!("median RMSE over 20 seeds for p = {counts:?}: {medians:.4?} nonincreasing"),
    );
    r.finish(Duration::from_secs(120));
}

fn squared_loss(net: &Mlp, x: &DMatrix<f64>, t: &DMatrix<f64>) -> f64 {
    let tape = net.forward_tape(x).unwrap();
    0.5 * (tape.output() - t).norm_squared()
}

#[test]
fn criterion_06_gradient_correctness() {
    let mut r = Report::new(6, "reverse-mode gradients against central differences");
    let seed = substream_seed(6, "acceptance/gradients");
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let mut rng = indexed(seed, i);
        let depth = rng.random_range(1..=3);
        let mut sizes = vec![rng.random_range(1..=5)];
        sizes.extend((0..depth).map(|_| rng.random_range(2..=8)));
        sizes.push(rng.random_range(1..=3));
        let net = Mlp::new(&sizes, &mut rng).unwrap();
        let batch = rng.random_range(1..=4);
        let x = DMatrix::from_fn(sizes[0], batch, |_, _| rng.random_range(-2.0..2.0));
        let t = DMatrix::from_fn(*sizes.last().unwrap(), batch, |_, _| rng.random_range(-1.0..1.0));
        let tape = net.forward_tape(&x).unwrap();
        let (g, dx) = net.backward(&tape, &(tape.output() - &t));
        let analytic = g.to_flat();
        let base = net.to_flat();
        let mut probe = net.clone();
        for k in 0..base.len() {
            let mut p = base.clone();
            p[k] += h;
            probe.set_flat(&p).unwrap();
            let up = squared_loss(&probe, &x, &t);
            p[k] -= 2.0 * h;
            probe.set_flat(&p).unwrap();
            let down = squared_loss(&probe, &x, &t);
            worst = worst.max(relative_error(analytic[k], (up - down) / (2.0 * h)));
        }
        for k in 0..x.len() {
            let mut xp = x.clone();
            xp[k] += h;
            let up = squared_loss(&net, &xp, &t);
            xp[k] -= 2.0 * h;
            let down = squared_loss(&net, &xp, &t);
            worst = worst.max(relative_error(dx[k], (up - down) / (2.0 * h)));
        }
    }
    r.check(worst < 1e-5, format!("50 random networks: max relative error {worst:.3e} < 1e−5"));

    let env = EnvModel::DoublePendulum(DoublePendulum::new(PendulumParams::default()).unwrap());
    let features = Features { velocity_scale: 0.1 };
    let policy = Mlp::new(&[8, 16, 16, 1], &mut seeded(seed)).unwrap();
    let x0 = DoublePendulum::rest_state();
    for kind in [ObjectiveKind::GoalOriented, ObjectiveKind::Classical] {
        let obj = DpcObjective::new(kind, 10).unwrap();
        let tape = rollout_loss(&policy, &env, features, &obj, &x0).unwrap();
        let analytic = rollout_gradient(&policy, &tape).to_flat();
        let base = policy.to_flat();
        let mut probe = policy.clone();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for k in 0..base.len() {
            let mut p = base.clone();
            p[k] += h;
            probe.set_flat(&p).unwrap();
            let up = rollout_loss(&probe, &env, features, &obj, &x0).unwrap().loss;
            p[k] -= 2.0 * h;
            probe.set_flat(&p).unwrap();
            let down = rollout_loss(&probe, &env, features, &obj, &x0).unwrap().loss;
            worst = worst.max(relative_error(analytic[k], (up - down) / (2.0 * h)));
        }
        r.check(worst < 1e-4, format!("T = 10 pendulum rollout, {kind:?} objective: max relative error {worst:.3e} < 1e−4"));
    }
    r.finish(Duration::from_secs(60));
}

#[test]
fn criterion_07_optimizer_contracts() {
    let mut r = Report::new(7, "SOAP and Adam contracts");
    let hp = AdamParams { lr: 1e-2, ..AdamParams::default() };
    let mut rng = seeded(substream_seed(7, "acceptance/soap"));
    let init = Mlp::new(&[4, 9, 3], &mut rng).unwrap();
    let (mut a_net, mut s_net) = (init.clone(), init);
    let mut adam = Adam::new(hp);
    let mut soap = Soap::new(hp, 0.95, None);
    let mut diff: f64 = 0.0;
    for _ in 0..200 {
        let mut g = a_net.zeros_like();
        let flat: Vec<f64> = (0..g.num_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
        g.set_flat(&flat).unwrap();
        adam.step(&mut a_net, &g).unwrap();
        soap.step(&mut s_net, &g).unwrap();
        diff = a_net.to_flat().iter().zip(s_net.to_flat()).map(|(a, s)| (a - s).abs()).fold(diff, f64::max);
    }
    r.check(diff <= 1e-10, format!("preconditioning disabled: max parameter difference from Adam {diff:.3e} over 200 steps"));

    let q = KroneckerQuadratic::rotated(8, 8, 1e3, 13);
    let cfg = OptimizerConfig { lr: 3e-2, ..OptimizerConfig::default() };
    let adam_iters = q.iterations_to(cfg.build(), 1e-6, 20_000, 99);
    let soap_iters = q.iterations_to(OptimizerConfig { kind: OptimizerKind::Soap, ..cfg }.build(), 1e-6, 20_000, 99);
    r.check(
        matches!((soap_iters, adam_iters), (Some(s), Some(a)) if s < a),
        format!("condition-10³ quadratic, iterations to 1e−6: SOAP {soap_iters:?}, Adam {adam_iters:?}"),
    );
    r.finish(Duration::from_secs(30));
}

fn dpc_cell(cell: &str, r: &mut Report) -> Vec<f64> {
    let out = scratch(&format!("c08-{cell}"));
    let started = Instant::now();
    let code = cli(&["dpc", "--config", &config(&format!("dpc/{cell}.toml")), "--seeds", "0..4", "--out", out.to_str().unwrap()]);
    let elapsed = started.elapsed();
    r.check(code == 0, format!("{cell}: exit code {code}"));
    r.check(elapsed <= Duration::from_secs(30 * 60), format!("{cell}: {:.0}s for 5 seeds (limit 30 min)", elapsed.as_secs_f64()));
    let (h, rows) = read_csv(&out.join("summary.csv"));
    let cos = floats(&column(&h, &rows, "final_mean_cos"));
    r.note(format!("{cell}: mean cos θ over the last 25 steps per seed {cos:.3?}"));
    for seed in 0..5 {
        r.check(
            out.join(format!("curve_seed{seed}.csv")).exists() && out.join(format!("rollout_seed{seed}.csv")).exists(),
            format!("{cell}: learning curve and final rollout written for seed {seed}"),
        );
    }
    cos
}

#[test]
fn criterion_08_pendulum_swing_up_cells() {
    let mut r = Report::new(8, "double-pendulum DPC cells, 5 seeds each");
    let goal = dpc_cell("goal_soap", &mut r);
    let quad = dpc_cell("quadratic_adam", &mut r);
    r.check(goal.iter().any(|c| *c > 0.8), "goal + SOAP exceeds 0.8 on at least one seed");
    r.check(quad.iter().all(|c| *c < 0.5), "quadratic + Adam stays below 0.5 on every seed");
    r.finish(Duration::from_secs(60 * 60));
}

#[test]
fn criterion_09_time_near_goal_trend() {
    let mut r = Report::new(9, "six-agent CSTR study, time near goal");
    let out = scratch("c09");
    let code = cli(&["rl-train", "--config", &config("rl/desk.toml"), "--out", out.to_str().unwrap()]);
    r.check(code == 0, format!("rl-train exit code {code}"));
    let cfg_text = std::fs::read_to_string(config("rl/desk.toml")).unwrap();
    r.note(format!("config configs/rl/desk.toml (inherits configs/rl/base.toml):\n{cfg_text}"));
    let manifest = goalctl_cli::manifest::RunManifest::read(&out).unwrap();
    r.note(format!("seeds {:?}", manifest.seeds));
    let (h, rows) = read_csv(&out.join("eval.csv"));
    let agents = column(&h, &rows, "agent");
    let scores = floats(&column(&h, &rows, "time_near_goal"));
    let of = |name: &str| -> Vec<f64> {
        agents.iter().zip(&scores).filter(|(a, _)| **a == name).map(|(_, s)| *s).collect()
    };
    let mut names: Vec<&str> = Vec::new();
    for a in &agents {
        if !names.contains(a) {
            names.push(a);
        }
    }
    for name in &names {
        let mut v = of(name);
        v.sort_by(f64::total_cmp);
        let q = |p: f64| v[((v.len() - 1) as f64 * p).round() as usize];
        r.note(format!(
            "{name:<26} n={:<5} min {:6.1}  q25 {:6.1}  median {:6.1}  q75 {:6.1}  max {:6.1}  mean {:6.2}",
            v.len(),
            q(0.0),
            q(0.25),
            q(0.5),
            q(0.75),
            q(1.0),
            v.iter().sum::<f64>() / v.len() as f64
        ));
    }
    let full = of("goal_conditioned-full");
    let minimal = of("goal_conditioned-minimal");
    let quad = of("quadratic-full");
    r.check(
        full.len() >= 100 && minimal.len() >= 100 && quad.len() >= 100,
        format!("evaluation episodes: full {}, minimal {}, quadratic full {}", full.len(), minimal.len(), quad.len()),
    );
    let (mf, mm, mq) = (median(&full), median(&minimal), median(&quad));
    r.check(mf >= mm, format!("goal-conditioned Full median {mf:.2} ≥ goal-conditioned Minimal median {mm:.2}"));
    r.check(mf > mq, format!("goal-conditioned Full median {mf:.2} > quadratic Full median {mq:.2}"));
    r.finish(Duration::from_secs(2 * 60 * 60));
}

fn goal_density_reward() -> RewardSpec {
    RewardSpec::new(RewardVariant::GoalDensity, DVector::zeros(1), None).unwrap()
}

#[test]
fn criterion_10_belief_value_iteration() {
    let mut r = Report::new(10, "belief-grid value iteration: reward placements and the fully observed limit");
    let grid = |mean_pts, var_range, var_pts, act_pts| {
        BeliefGridSpec::new(
            UniformGrid::new(-4.0, 4.0, mean_pts).unwrap(),
            var_range,
            var_pts,
            UniformGrid::new(-4.0, 4.0, act_pts).unwrap(),
        )
        .unwrap()
    };
    let reward = goal_density_reward();
    let model = LinearGaussian::scalar(0.9, 1.0, 0.5, 1.0, 4.0).unwrap();
    let spec = grid(41, (1e-2, 2.0), 11, 61);
    let prior = belief_grid_value_iteration(&model, &reward, RewardPlacement::Prior, 0.8, &spec).unwrap();
    let cond = belief_grid_value_iteration(&model, &reward, RewardPlacement::ObservationConditioned, 0.8, &spec).unwrap();
    let diff = prior.values.iter().zip(&cond.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    r.check(diff < 1e-6, format!("prior vs observation-conditioned reward: max value difference {diff:.3e} < 1e−6"));

    let model = LinearGaussian::scalar(0.9, 1.0, 1.0, 1.0, 1e-8).unwrap();
    let spec = grid(61, (1e-8, 2.0), 9, 121);
    let belief = belief_grid_value_iteration(&model, &reward, RewardPlacement::Prior, 0.8, &spec).unwrap();
    let state = grid_value_iteration(&model, &reward, 0.8, &GridSpec::with_grids(spec.mean.clone(), spec.actions.clone())).unwrap();
    let tol = 2.0 * belief.interpolation_error(0);
    let worst = belief.row(0).iter().zip(&state.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    r.check(worst <= tol, format!("variance-zero slice vs state-grid DP: max difference {worst:.3e} ≤ 2 interpolation errors {tol:.3e}"));
    r.finish(Duration::from_secs(300));
}

/// Relative path → bytes for every CSV (and SVG) under `dir`.
fn artifacts(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if matches!(p.extension().and_then(|e| e.to_str()), Some("csv" | "svg")) {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn criterion_11_byte_identical_reruns() {
    let mut r = Report::new(11, "identical config and seed give byte-identical CSV outputs");
    let work = scratch("c11");
    let write = |name: &str, body: String| {
        let p = work.join(name);
        std::fs::write(&p, body).unwrap();
        p.display().to_string()
    };
    let thm1 = write("thm1.toml", format!("inherit = {:?}\nrollouts = 50\nhorizon = 40\n", config("verify/thm1.toml")));
    let cor2 = write("cor2.toml", format!("inherit = {:?}\nrollouts = 50\nhorizon = 40\n", config("verify/cor2.toml")));
    let study = write(
        "study.toml",
        format!("inherit = {:?}\n[study]\nrollouts = 100\nhorizon = 60\nstate_points = 51\naction_points = 81\n", config("study/corollary1.toml")),
    );
    let dpc = write("dpc.toml", format!("inherit = {:?}\n[dpc]\niterations = 15\nhorizon = 30\ntail = 10\n", config("dpc/goal_soap.toml")));
    let rl = write(
        "rl.toml",
        format!(
            "inherit = {:?}\n[rl]\nepisodes = 2\nsteps = 12\nwarmup_episodes = 1\nbatch_size = 8\neval_episodes = 3\nagents = [{{ regime = \"full\", reward = \"goal_conditioned\" }}, {{ regime = \"minimal\", reward = \"goal_conditioned\" }}]\n[rl.sac]\nhidden = [8]\n[traces]\nparticles = [5]\n",
            config("rl/desk.toml")
        ),
    );
    let filter = write("filter.toml", format!("inherit = {:?}\nsteps = 20\nparticles = 200\n", config("filter/cstr.toml")));
    let runs: Vec<(&str, Vec<String>)> = vec![
        ("verify-thm1", vec!["--config".into(), thm1, "--seeds".into(), "0..2".into()]),
        ("verify-cor2", vec!["--config".into(), cor2, "--seeds".into(), "3,5".into()]),
        ("corollary1-study", vec!["--config".into(), study]),
        ("dpc", vec!["--config".into(), dpc, "--seeds".into(), "1".into()]),
        ("rl-train", vec!["--config".into(), rl, "--seeds".into(), "2".into()]),
        ("filter-demo", vec!["--config".into(), filter, "--seeds".into(), "0,7".into()]),
    ];
    for (cmd, args) in &runs {
        let mut outputs = Vec::new();
        for rep in 0..2 {
            let out = work.join(format!("{cmd}-{rep}"));
            let mut argv: Vec<&str> = vec![cmd];
            argv.extend(args.iter().map(String::as_str));
            argv.extend(["--out", out.to_str().unwrap()]);
            let code = cli(&argv);
            r.check(code == 0, format!("{cmd} run {rep}: exit code {code}"));
            if *cmd == "rl-train" {
                let eval_out = work.join(format!("rl-eval-{rep}"));
                let code = cli(&["rl-eval", "--from", out.to_str().unwrap(), "--regime-env", "--out", eval_out.to_str().unwrap()]);
                r.check(code == 0, format!("rl-eval run {rep}: exit code {code}"));
                let svg = eval_out.join("time_near_goal.svg");
                let code = cli(&["plot", "--kind", "time-near-goal", "--in", eval_out.join("eval.csv").to_str().unwrap(), "--out", svg.to_str().unwrap()]);
                r.check(code == 0, format!("plot time-near-goal run {rep}: exit code {code}"));
                outputs.push(artifacts(&eval_out));
            }
            if *cmd == "dpc" {
                let svg = out.join("profile.svg");
                let code = cli(&["plot", "--kind", "dip-profile", "--in", out.join("rollout_seed1.csv").to_str().unwrap(), "--out", svg.to_str().unwrap()]);
                r.check(code == 0, format!("plot dip-profile run {rep}: exit code {code}"));
            }
            outputs.push(artifacts(&out));
        }
        let n = outputs.len() / 2;
        let same = outputs[..n] == outputs[n..];
        let files: usize = outputs[..n].iter().map(Vec::len).sum();
        r.check(same && files > 0, format!("{cmd}: {files} CSV/SVG file(s) byte-identical across reruns"));
    }
    r.finish(Duration::from_secs(600));
}
