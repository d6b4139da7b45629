//! Subcommand pipelines.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use goalctl::analysis::{
    corollary1_study as run_corollary1, dlqr, kalman_filter, verify_lqr_bound, verify_prob_bound, BoundReport,
    Corollary1Config, Corollary1Report, LinearPolicy,
};
use goalctl::belief::ParticleBelief;
use goalctl::dpc::{train_dpc, DpcConfig};
use goalctl::env::{
    CstrParams, EnvConfig, EnvModel, LinearGaussian, LinearGaussianParams, PendulumParams, ScenarioParams,
};
use goalctl::nnopt::checkpoint;
use goalctl::rl::{
    evaluate_agent, median, trace_episode, train_agent, write_eval_csv, write_trace_csv, AgentBundle, AgentSpec,
    EvalRow, RlConfig, TrainedAgent,
};
use goalctl::rng::substream;

use crate::config::{self, config_hash, parse_seeds, SeedSpec, Validate};
use crate::manifest::{resolve_out, OutputDir, RunManifest};
use crate::{CliError, RunArgs};

/// Run-level keys every command config carries.
trait RunConfig: Validate + Serialize + DeserializeOwned + Clone {
    fn seeds(&self) -> Option<&SeedSpec>;
    fn output(&self) -> Option<&str>;
    /// Copy without the seed list and output path, which are recorded in
    /// the manifest rather than hashed.
    fn hashed(&self) -> Self;
}

macro_rules! run_config {
    ($t:ty) => {
        impl RunConfig for $t {
            fn seeds(&self) -> Option<&SeedSpec> {
                self.seeds.as_ref()
            }
            fn output(&self) -> Option<&str> {
                self.output.as_deref()
            }
            fn hashed(&self) -> Self {
                let mut c = self.clone();
                c.seeds = None;
                c.output = None;
                c
            }
        }
    };
}

struct Prepared<T> {
    cfg: T,
    seeds: Vec<u64>,
    hash: String,
    out: OutputDir,
}

fn load_table(args: &RunArgs) -> Result<Table, CliError> {
    match &args.config {
        Some(p) => config::load_table(p),
        None => Ok(Table::new()),
    }
}

fn resolve_seeds(flag: Option<&str>, from_config: Option<&SeedSpec>) -> Result<Vec<u64>, CliError> {
    let seeds = match (flag, from_config) {
        (Some(s), _) => parse_seeds(s).map_err(|e| format!("--seeds: {e}")),
        (None, Some(spec)) => spec.resolve().map_err(|e| format!("seeds: {e}")),
        (None, None) => Ok(vec![0]),
    };
    seeds.map_err(|e| CliError::Validation(vec![e]))
}

fn prepare<T: RunConfig>(command: &str, args: &RunArgs, table: Table) -> Result<Prepared<T>, CliError> {
    let cfg: T = config::parse(&table)?;
    let seeds = resolve_seeds(args.seeds.as_deref(), cfg.seeds())?;
    let hashed = cfg.hashed();
    let hash = config_hash(&hashed)?;
    let dir = resolve_out(command, args.out.as_deref(), cfg.output(), &hash);
    let mut out = OutputDir::create(dir)?;
    let resolved = toml::to_string(&hashed).map_err(|e| CliError::Runtime(format!("serializing config: {e}")))?;
    out.write("config.toml", resolved.as_bytes())?;
    Ok(Prepared { cfg, seeds, hash, out })
}

fn finish(command: &str, p: Prepared<impl Sized>, mut summary: String) -> Result<String, CliError> {
    let root = p.out.root().display().to_string();
    let manifest = p.out.finish(command, &p.hash, &p.seeds)?;
    let _ = writeln!(
        summary,
        "wrote {} artifact(s) to {root} in {:.1}s",
        manifest.artifacts.len(),
        manifest.wall_clock_seconds
    );
    Ok(summary)
}

fn set_path(table: &mut Table, path: &[&str], value: Value) {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut t = table;
    for key in parents {
        let entry = t.entry(key.to_string()).or_insert_with(|| Value::Table(Table::new()));
        if !entry.is_table() {
            *entry = Value::Table(Table::new());
        }
        t = entry.as_table_mut().expect("just made a table");
    }
    t.insert(last.to_string(), value);
}

fn matrix(rows: &[Vec<f64>]) -> Option<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first()?.len();
    if c == 0 || rows.iter().any(|row| row.len() != c) {
        return None;
    }
    Some(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn check_env(env: &EnvConfig, problems: &mut Vec<String>) -> Option<EnvModel> {
    match EnvModel::from_config(env) {
        Ok(m) => Some(m),
        Err(e) => {
            problems.push(format!("env: {e}"));
            None
        }
    }
}

fn check_gamma(gamma: f64, problems: &mut Vec<String>) {
    if !(gamma > 0.0 && gamma < 1.0) {
        problems.push(format!("gamma: must lie in (0, 1), got {gamma}"));
    }
}

fn check_positive(name: &str, v: usize, problems: &mut Vec<String>) {
    if v == 0 {
        problems.push(format!("{name}: must be positive"));
    }
}

pub fn default_linear_env() -> EnvConfig {
    EnvConfig::LinearGaussian(LinearGaussianParams {
        a: vec![vec![0.95, 0.10], vec![-0.10, 0.95]],
        b: vec![vec![0.0], vec![1.0]],
        c: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        process_cov: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        measurement_cov: vec![vec![0.25, 0.0], vec![0.0, 0.25]],
        initial_mean: Some(vec![2.0, -1.0]),
        initial_cov: Some(vec![vec![1.0, 0.0], vec![0.0, 1.0]]),
        action_low: None,
        action_high: None,
    })
}

fn linear_model(env: &EnvConfig) -> Result<LinearGaussian, CliError> {
    match EnvModel::from_config(env)? {
        EnvModel::LinearGaussian(lg) => Ok(lg),
        _ => Err(CliError::Validation(vec!["env: this command needs kind = \"linear_gaussian\"".into()])),
    }
}

// ---------------------------------------------------------------- policies

/// Linear state feedback `u = −K x`. Without an explicit gain, `K` is the
/// discounted LQR gain for `Q = lqr_q·I`, `R = lqr_r·I`. A positive
/// `gain_noise` perturbs every entry of `K` by independent normal noise
/// drawn per seed, giving one random policy per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GainConfig {
    pub gain: Option<Vec<Vec<f64>>>,
    pub lqr_q: f64,
    pub lqr_r: f64,
    pub gain_noise: f64,
}

impl Default for GainConfig {
    fn default() -> Self {
        Self {
            gain: None,
            lqr_q: 1.0,
            lqr_r: 1.0,
            gain_noise: 0.0,
        }
    }
}

impl GainConfig {
    fn check(&self, problems: &mut Vec<String>) {
        if let Some(g) = &self.gain {
            if matrix(g).is_none() {
                problems.push("policy.gain: must be a non-empty rectangular matrix".into());
            }
        }
        if !(self.lqr_q > 0.0) || !(self.lqr_r > 0.0) {
            problems.push("policy.lqr_q, policy.lqr_r: must be positive".into());
        }
        if !(self.gain_noise >= 0.0) {
            problems.push("policy.gain_noise: must be nonnegative".into());
        }
    }

    fn policy(&self, lg: &LinearGaussian, gamma: f64, seed: u64) -> Result<LinearPolicy, CliError> {
        let (n, m) = (lg.a.nrows(), lg.b.ncols());
        let mut k = match &self.gain {
            Some(g) => {
                let k = matrix(g).expect("validated");
                if k.shape() != (m, n) {
                    return Err(CliError::Validation(vec![format!(
                        "policy.gain: expected {m}x{n}, got {}x{}",
                        k.nrows(),
                        k.ncols()
                    )]));
                }
                k
            }
            None => dlqr(
                &lg.a,
                &lg.b,
                &DMatrix::from_diagonal_element(n, n, self.lqr_q),
                &DMatrix::from_diagonal_element(m, m, self.lqr_r),
                gamma,
            )?,
        };
        if self.gain_noise > 0.0 {
            let mut rng = substream(seed, "policy");
            for v in k.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += self.gain_noise * z;
            }
        }
        Ok(LinearPolicy::new(k))
    }
}

// ---------------------------------------------------------------- verify-thm1

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thm1Config {
    pub seeds: Option<SeedSpec>,
    pub output: Option<String>,
    pub gamma: f64,
    pub rollouts: usize,
    pub horizon: usize,
    pub policy: GainConfig,
    pub env: EnvConfig,
}

impl Default for Thm1Config {
    fn default() -> Self {
        Self {
            seeds: None,
            output: None,
            gamma: 0.95,
            rollouts: 1000,
            horizon: 200,
            policy: GainConfig::default(),
            env: default_linear_env(),
        }
    }
}

fn check_linear_env(env: &EnvConfig, problems: &mut Vec<String>) {
    if !matches!(env, EnvConfig::LinearGaussian(_)) {
        problems.push("env.kind: must be \"linear_gaussian\"".into());
    } else {
        check_env(env, problems);
    }
}

impl Validate for Thm1Config {
    fn validate(&self) -> Vec<String> {
        let mut p = Vec::new();
        check_gamma(self.gamma, &mut p);
        check_positive("rollouts", self.rollouts, &mut p);
        check_positive("horizon", self.horizon, &mut p);
        self.policy.check(&mut p);
        check_linear_env(&self.env, &mut p);
        p
    }
}
run_config!(Thm1Config);

fn holds_text(all: bool) -> &'static str {
    if all {
        "all hold"
    } else {
        "VIOLATIONS present"
    }
}

pub fn verify_thm1(args: &RunArgs) -> Result<String, CliError> {
    let mut p: Prepared<Thm1Config> = prepare("verify-thm1", args, load_table(args)?)?;
    let lg = linear_model(&p.cfg.env)?;
    let model = EnvModel::LinearGaussian(lg.clone());
    let mut csv = format!("seed,{}\n", BoundReport::CSV_HEADER);
    let mut held = 0;
    let mut worst_slack = f64::INFINITY;
    for &seed in &p.seeds {
        let policy = p.cfg.policy.policy(&lg, p.cfg.gamma, seed)?;
        let mut rng = substream(seed, "rollouts");
        let report = verify_prob_bound(&policy, &model, p.cfg.gamma, p.cfg.rollouts, p.cfg.horizon, &mut rng)?;
        held += usize::from(report.holds);
        worst_slack = worst_slack.min(report.min_trajectory_slack);
        let _ = writeln!(csv, "{seed},{}", report.csv_row());
    }
    p.out.write("bounds.csv", csv.as_bytes())?;
    let summary = format!(
        "verify-thm1: {held}/{} seeds hold ({}); smallest per-trajectory slack {worst_slack:.3e}\n",
        p.seeds.len(),
        holds_text(held == p.seeds.len())
    );
    finish("verify-thm1", p, summary)
}

// ---------------------------------------------------------------- verify-cor2

/// Cost weights. Missing matrices are drawn per seed as `G Gᵀ/n + 0.1 I`
/// with standard normal `G`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightsConfig {
    pub m: Option<Vec<Vec<f64>>>,
    pub r: Option<Vec<Vec<f64>>>,
    /// Each seed is evaluated with `R` multiplied by every scale, on the
    /// same rollouts.
    pub r_scales: Vec<f64>,
}

impl Default for WeightsConfig {
    fn default() -> Self {
        Self {
            m: None,
            r: None,
            r_scales: vec![1.0, 10.0, 100.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Cor2Config {
    pub seeds: Option<SeedSpec>,
    pub output: Option<String>,
    pub gamma: f64,
    pub rollouts: usize,
    pub horizon: usize,
    pub policy: GainConfig,
    pub weights: WeightsConfig,
    pub env: EnvConfig,
}

impl Default for Cor2Config {
    fn default() -> Self {
        Self {
            seeds: None,
            output: None,
            gamma: 0.95,
            rollouts: 1000,
            horizon: 200,
            policy: GainConfig::default(),
            weights: WeightsConfig::default(),
            env: default_linear_env(),
        }
    }
}

impl Validate for Cor2Config {
    fn validate(&self) -> Vec<String> {
        let mut p = Vec::new();
        check_gamma(self.gamma, &mut p);
        check_positive("rollouts", self.rollouts, &mut p);
        check_positive("horizon", self.horizon, &mut p);
        self.policy.check(&mut p);
        check_linear_env(&self.env, &mut p);
        for (name, w) in [("weights.m", &self.weights.m), ("weights.r", &self.weights.r)] {
            if let Some(rows) = w {
                if matrix(rows).is_none() {
                    p.push(format!("{name}: must be a non-empty rectangular matrix"));
                }
            }
        }
        if self.weights.r_scales.is_empty() || self.weights.r_scales.iter().any(|s| !(*s > 0.0)) {
            p.push("weights.r_scales: need at least one positive scale".into());
        }
        p
    }
}
run_config!(Cor2Config);

fn random_spd(n: usize, rng: &mut goalctl::rng::Rng) -> DMatrix<f64> {
    let g: DMatrix<f64> = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(rng));
    &g * g.transpose() / n as f64 + DMatrix::from_diagonal_element(n, n, 0.1)
}

pub fn verify_cor2(args: &RunArgs) -> Result<String, CliError> {
    let mut p: Prepared<Cor2Config> = prepare("verify-cor2", args, load_table(args)?)?;
    let lg = linear_model(&p.cfg.env)?;
    let (n, m) = (lg.a.nrows(), lg.b.ncols());
    let model = EnvModel::LinearGaussian(lg.clone());
    let mut csv = format!("seed,r_scale,{}\n", BoundReport::CSV_HEADER);
    let (mut held, mut total) = (0, 0);
    let mut rhs_spread: f64 = 0.0;
    for &seed in &p.seeds {
        let policy = p.cfg.policy.policy(&lg, p.cfg.gamma, seed)?;
        let mut wrng = substream(seed, "weights");
        let mm = p.cfg.weights.m.as_deref().and_then(matrix).unwrap_or_else(|| random_spd(n, &mut wrng));
        let rr = p.cfg.weights.r.as_deref().and_then(matrix).unwrap_or_else(|| random_spd(m, &mut wrng));
        let mut rhs = Vec::new();
        for &scale in &p.cfg.weights.r_scales {
            let mut rng = substream(seed, "rollouts");
            let report =
                verify_lqr_bound(&policy, &model, &mm, &(&rr * scale), p.cfg.gamma, p.cfg.rollouts, p.cfg.horizon, &mut rng)?;
            held += usize::from(report.holds);
            total += 1;
            rhs.push(report.rhs);
            let _ = writeln!(csv, "{seed},{scale},{}", report.csv_row());
        }
        let (lo, hi) = rhs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        rhs_spread = rhs_spread.max(hi - lo);
    }
    p.out.write("bounds.csv", csv.as_bytes())?;
    let summary = format!(
        "verify-cor2: {held}/{total} (seed, R scale) cases hold ({}); largest right-side spread across R scales {rhs_spread:.3e}\n",
        holds_text(held == total)
    );
    finish("verify-cor2", p, summary)
}

// ---------------------------------------------------------------- corollary1-study

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Corollary1File {
    pub seeds: Option<SeedSpec>,
    pub output: Option<String>,
    pub study: Corollary1Config,
}

impl Validate for Corollary1File {
    fn validate(&self) -> Vec<String> {
        let s = &self.study;
        let mut p = Vec::new();
        check_gamma(s.gamma, &mut p);
        check_positive("study.rollouts", s.rollouts, &mut p);
        check_positive("study.horizon", s.horizon, &mut p);
        check_positive("study.quadrature_order", s.quadrature_order, &mut p);
        if s.state_points < 3 || s.action_points < 3 {
            p.push("study.state_points, study.action_points: need at least 3 grid points".into());
        }
        if !(s.process_var > 0.0) || !(s.initial_var >= 0.0) {
            p.push("study.process_var must be positive and study.initial_var nonnegative".into());
        }
        if !(s.lqr_q > 0.0) || !(s.lqr_r > 0.0) {
            p.push("study.lqr_q, study.lqr_r: must be positive".into());
        }
        if !(s.range_sigmas > 0.0) {
            p.push("study.range_sigmas: must be positive".into());
        }
        p
    }
}
run_config!(Corollary1File);

pub fn corollary1_study(args: &RunArgs) -> Result<String, CliError> {
    let mut p: Prepared<Corollary1File> = prepare("corollary1-study", args, load_table(args)?)?;
    let mut csv = format!("{}\n", Corollary1Report::CSV_HEADER);
    let mut summary = String::new();
    for (i, &seed) in p.seeds.iter().enumerate() {
        let (report, table) = run_corollary1(&p.cfg.study, seed)?;
        let _ = writeln!(csv, "{}", report.csv_row());
        let _ = writeln!(
            summary,
            "corollary1-study seed {seed}: J(dp) {:.6} ± {:.1e}, J(lqr) {:.6} ± {:.1e}, gap {:.3e} ± {:.1e} ({})",
            report.dp.estimate,
            report.dp.stderr,
            report.lqr.estimate,
            report.lqr.stderr,
            report.gap,
            report.gap_stderr,
            if report.holds() { "gap > 3 SE" } else { "gap NOT > 3 SE" }
        );
        // The value table depends on the system only, so one copy suffices.
        if i == 0 {
            p.out.write_with("value_table.csv", |w| table.write_csv(w))?;
        }
    }
    p.out.write("study.csv", csv.as_bytes())?;
    finish("corollary1-study", p, summary)
}

// ---------------------------------------------------------------- dpc

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DpcFile {
    pub seeds: Option<SeedSpec>,
    pub output: Option<String>,
    pub dpc: DpcConfig,
    pub env: EnvConfig,
}

impl Default for DpcFile {
    fn default() -> Self {
        Self {
            seeds: None,
            output: None,
            dpc: DpcConfig::default(),
            env: EnvConfig::DoublePendulum(PendulumParams::default()),
        }
    }
}

impl Validate for DpcFile {
    fn validate(&self) -> Vec<String> {
        let d = &self.dpc;
        let mut p = Vec::new();
        check_positive("dpc.horizon", d.horizon, &mut p);
        check_positive("dpc.iterations", d.iterations, &mut p);
        if d.tail == 0 || d.tail > d.horizon {
            p.push(format!("dpc.tail: must lie in 1..={}", d.horizon));
        }
        if d.hidden.contains(&0) {
            p.push("dpc.hidden: layer widths must be positive".into());
        }
        if !(d.velocity_scale > 0.0) {
            p.push("dpc.velocity_scale: must be positive".into());
        }
        if !(d.optimizer.lr > 0.0) {
            p.push("dpc.optimizer.lr: must be positive".into());
        }
        if !matches!(self.env, EnvConfig::DoublePendulum(_)) {
            p.push("env.kind: must be \"double_pendulum\"".into());
        } else {
            check_env(&self.env, &mut p);
        }
        p
    }
}
run_config!(DpcFile);

pub fn dpc(args: &RunArgs, objective: Option<&str>, optimizer: Option<&str>) -> Result<String, CliError> {
    let mut table = load_table(args)?;
    if let Some(o) = objective {
        set_path(&mut table, &["dpc", "objective"], Value::String(o.to_string()));
    }
    if let Some(o) = optimizer {
        set_path(&mut table, &["dpc", "optimizer", "kind"], Value::String(o.to_string()));
    }
    let mut p: Prepared<DpcFile> = prepare("dpc", args, table)?;
    let model = EnvModel::from_config(&p.cfg.env)?;
    let objective = Value::try_from(p.cfg.dpc.objective).map(|v| v.to_string()).unwrap_or_default();
    let optimizer = Value::try_from(p.cfg.dpc.optimizer.kind).map(|v| v.to_string()).unwrap_or_default();
    let (objective, optimizer) = (objective.trim_matches('"').to_string(), optimizer.trim_matches('"').to_string());
    let mut csv = String::from("seed,objective,optimizer,final_mean_cos,final_loss,failures\n");
    let mut summary = String::new();
    for &seed in &p.seeds {
        let run = train_dpc(&p.cfg.dpc, &model, seed)?;
        p.out.write_with(&format!("curve_seed{seed}.csv"), |w| run.write_curve_csv(w))?;
        p.out.write_with(&format!("rollout_seed{seed}.csv"), |w| run.final_rollout.write_csv(w))?;
        p.out.write(&format!("policy_seed{seed}.mlp"), checkpoint::to_string(&run.policy).as_bytes())?;
        let cos = run.final_mean_cos(p.cfg.dpc.tail);
        let loss = run.curve.last().map_or(f64::NAN, |c| c.loss);
        let _ = writeln!(csv, "{seed},{objective},{optimizer},{cos},{loss},{}", run.failures.len());
        let _ = writeln!(
            summary,
            "dpc {objective}+{optimizer} seed {seed}: mean cos over last {} steps {cos:.4}, final loss {loss:.4}",
            p.cfg.dpc.tail
        );
    }
    p.out.write("summary.csv", csv.as_bytes())?;
    finish("dpc", p, summary)
}

// ---------------------------------------------------------------- rl-train / rl-eval

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TraceConfig {
    /// Particle counts for the single-episode filter traces.
    pub particles: Vec<usize>,
    /// Index of the evaluation episode that is traced.
    pub episode: usize,
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self {
            particles: vec![10, 100],
            episode: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RlFile {
    pub seeds: Option<SeedSpec>,
    pub output: Option<String>,
    pub rl: RlConfig,
    pub traces: TraceConfig,
    pub env: EnvConfig,
}

impl Default for RlFile {
    fn default() -> Self {
        Self {
            seeds: None,
            output: None,
            rl: RlConfig::default(),
            traces: TraceConfig::default(),
            env: EnvConfig::Cstr(CstrParams::default()),
        }
    }
}

impl Validate for RlFile {
    fn validate(&self) -> Vec<String> {
        let r = &self.rl;
        let mut p = Vec::new();
        check_positive("rl.episodes", r.episodes, &mut p);
        check_positive("rl.eval_episodes", r.eval_episodes, &mut p);
        check_positive("rl.buffer_capacity", r.buffer_capacity, &mut p);
        check_positive("rl.updates_per_step", r.updates_per_step, &mut p);
        if r.sac.hidden.contains(&0) {
            p.push("rl.sac.hidden: layer widths must be positive".into());
        }
        if !(r.sac.polyak >= 0.0 && r.sac.polyak <= 1.0) {
            p.push("rl.sac.polyak: must lie in [0, 1]".into());
        }
        if !(r.psi_jitter >= 0.0) {
            p.push("rl.psi_jitter: must be nonnegative".into());
        }
        if self.traces.particles.contains(&0) {
            p.push("traces.particles: counts must be positive".into());
        }
        let mut seen = std::collections::HashSet::new();
        for a in &r.agents {
            if !seen.insert(a.name()) {
                p.push(format!("rl.agents: {} listed twice", a.name()));
            }
        }
        if let Some(model) = check_env(&self.env, &mut p) {
            if !model.bounds().is_finite() {
                p.push("env: actor-critic agents need finite action bounds".into());
            }
            if let Err(e) = r.validate(&model) {
                p.push(format!("rl: {e}"));
            }
        }
        p
    }
}
run_config!(RlFile);

const LOG_HEADER: &str =
    "seed,agent,episode,return_sum,time_near_goal,belief_resets,critic_loss,actor_loss,alpha,entropy,mean_q";

fn checkpoint_dir(seed: u64, agent: &str) -> String {
    format!("checkpoints/seed{seed}/{agent}")
}

/// Per-agent distribution summary over the evaluation rows, per seed and
/// pooled over seeds.
fn eval_summary(rows: &[EvalRow], agents: &[AgentSpec], seeds: &[u64]) -> (String, String) {
    let mut csv = String::from("seed,agent,episodes,median,mean,q25,q75\n");
    let mut text = String::new();
    let quantile = |v: &[f64], q: f64| -> f64 {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        let pos = q * (s.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
    };
    let mut emit = |seed: String, agent: &str, v: &[f64], csv: &mut String| {
        if v.is_empty() {
            return;
        }
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let med = median(v).unwrap_or(f64::NAN);
        let _ = writeln!(
            csv,
            "{seed},{agent},{},{med},{mean},{},{}",
            v.len(),
            quantile(v, 0.25),
            quantile(v, 0.75)
        );
        if seed == "all" {
            let _ = writeln!(
                text,
                "  {agent:<26} median {med:7.2}  mean {mean:7.2}  IQR [{:.2}, {:.2}]  n={}",
                quantile(v, 0.25),
                quantile(v, 0.75),
                v.len()
            );
        }
    };
    for a in agents {
        let name = a.name();
        for &s in seeds {
            let v: Vec<f64> = rows.iter().filter(|r| r.agent == name && r.seed == s).map(|r| r.time_near_goal).collect();
            emit(s.to_string(), &name, &v, &mut csv);
        }
        let v: Vec<f64> = rows.iter().filter(|r| r.agent == name).map(|r| r.time_near_goal).collect();
        emit("all".into(), &name, &v, &mut csv);
    }
    (csv, text)
}

/// The two orderings the desk-scale study looks for, reported as text.
fn trend_lines(rows: &[EvalRow]) -> String {
    let med = |agent: &str| {
        let v: Vec<f64> = rows.iter().filter(|r| r.agent == agent).map(|r| r.time_near_goal).collect();
        median(&v)
    };
    let mut s = String::new();
    let pairs = [
        ("goal_conditioned-full", "goal_conditioned-minimal", ">="),
        ("goal_conditioned-full", "quadratic-full", ">"),
    ];
    for (a, b, op) in pairs {
        if let (Some(x), Some(y)) = (med(a), med(b)) {
            let ok = if op == ">=" { x >= y } else { x > y };
            let _ = writeln!(s, "  median {a} {x:.2} {op} {b} {y:.2}: {}", if ok { "yes" } else { "no" });
        }
    }
    s
}

pub fn rl_train(args: &RunArgs) -> Result<String, CliError> {
    let mut p: Prepared<RlFile> = prepare("rl-train", args, load_table(args)?)?;
    let model = EnvModel::from_config(&p.cfg.env)?;
    let cfg = p.cfg.rl.clone();
    let mut eval_rows = Vec::new();
    let mut log = format!("{LOG_HEADER}\n");
    for &seed in &p.seeds.clone() {
        for &spec in &cfg.agents {
            let name = spec.name();
            let agent = train_agent(&cfg, &model, spec, seed)?;
            let dir = checkpoint_dir(seed, &name);
            p.out.write(&format!("{dir}/actor.mlp"), checkpoint::to_string(&agent.bundle.actor).as_bytes())?;
            for (k, c) in agent.bundle.critics.iter().enumerate() {
                p.out.write(&format!("{dir}/critic{}.mlp", k + 1), checkpoint::to_string(c).as_bytes())?;
            }
            for l in &agent.log {
                let d = l.last_update.map_or(",,,,".to_string(), |d| {
                    format!("{},{},{},{},{}", d.critic_loss, d.actor_loss, d.alpha, d.entropy, d.mean_q)
                });
                let _ = writeln!(
                    log,
                    "{seed},{name},{},{},{},{},{d}",
                    l.episode, l.return_sum, l.time_near_goal, l.belief_resets
                );
            }
            for &count in &p.cfg.traces.particles {
                let ep = trace_episode(&cfg, &model, &agent, count, seed, p.cfg.traces.episode)?;
                p.out.write_with(&format!("traces/seed{seed}/{name}_p{count}.csv"), |w| {
                    write_trace_csv(&ep.trace, w)
                })?;
            }
            let settings = cfg.evaluation_settings(spec.regime, cfg.eval_particles);
            eval_rows.extend(evaluate_agent(&cfg, &model, &agent, &settings, cfg.eval_episodes, seed)?);
        }
    }
    p.out.write("train_log.csv", log.as_bytes())?;
    p.out.write_with("eval.csv", |w| write_eval_csv(&eval_rows, w))?;
    let (csv, text) = eval_summary(&eval_rows, &cfg.agents, &p.seeds);
    p.out.write("summary.csv", csv.as_bytes())?;
    let summary = format!(
        "rl-train: time near goal over {} evaluation episode(s) per agent and seed\n{text}{}",
        cfg.eval_episodes,
        trend_lines(&eval_rows)
    );
    finish("rl-train", p, summary)
}

fn load_agent(from: &Path, seed: u64, spec: AgentSpec, model: &EnvModel, cfg: &RlConfig) -> Result<TrainedAgent, CliError> {
    let dir = from.join(checkpoint_dir(seed, &spec.name()));
    let load = |f: &str| checkpoint::load(&dir.join(f)).map_err(CliError::from);
    let bundle = AgentBundle::from_networks(model, cfg.sac.clone(), load("actor.mlp")?, [load("critic1.mlp")?, load("critic2.mlp")?])?;
    Ok(TrainedAgent {
        spec,
        bundle,
        log: Vec::new(),
    })
}

/// Re-evaluates the checkpoints of an `rl-train` run. The training
/// directory's `config.toml` and seeds are used unless overridden.
pub fn rl_eval(args: &RunArgs, from: &Path, regime_env: bool) -> Result<String, CliError> {
    let table = match &args.config {
        Some(path) => config::load_table(path)?,
        None => config::load_table(&from.join("config.toml"))?,
    };
    let trained = RunManifest::read(from)?;
    let cfg_file: RlFile = config::parse(&table)?;
    let seeds = match &args.seeds {
        Some(_) => resolve_seeds(args.seeds.as_deref(), None)?,
        None => trained.seeds.clone(),
    };
    let hash = config_hash(&(cfg_file.hashed(), regime_env, &trained.config_hash))?;
    let default_dir = from.join(if regime_env { "eval-regime" } else { "eval" });
    let dir = args.out.clone().unwrap_or(default_dir);
    let mut out = OutputDir::create(dir)?;
    let model = EnvModel::from_config(&cfg_file.env)?;
    let cfg = &cfg_file.rl;
    let mut rows = Vec::new();
    for &seed in &seeds {
        for &spec in &cfg.agents {
            let agent = load_agent(from, seed, spec, &model, cfg)?;
            let settings = if regime_env {
                cfg.regime_evaluation_settings(spec.regime, cfg.eval_particles)
            } else {
                cfg.evaluation_settings(spec.regime, cfg.eval_particles)
            };
            rows.extend(evaluate_agent(cfg, &model, &agent, &settings, cfg.eval_episodes, seed)?);
        }
    }
    out.write_with("eval.csv", |w| write_eval_csv(&rows, w))?;
    let (csv, text) = eval_summary(&rows, &cfg.agents, &seeds);
    out.write("summary.csv", csv.as_bytes())?;
    let summary = format!(
        "rl-eval ({} environment):\n{text}{}",
        if regime_env { "per-regime" } else { "common fixed-parameter" },
        trend_lines(&rows)
    );
    let p = Prepared {
        cfg: (),
        seeds,
        hash,
        out,
    };
    finish("rl-eval", p, summary)
}

// ---------------------------------------------------------------- filter-demo

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterDemoConfig {
    pub seeds: Option<SeedSpec>,
    pub output: Option<String>,
    pub particles: usize,
    pub steps: usize,
    /// Constant input; defaults to the middle of the action box, or zero
    /// when the box is unbounded.
    pub action: Option<Vec<f64>>,
    pub resample: bool,
    pub psi_jitter: f64,
    /// Artificial process noise std per state coordinate; empty for none.
    pub filter_noise: Vec<f64>,
    pub env: EnvConfig,
}

impl Default for FilterDemoConfig {
    fn default() -> Self {
        Self {
            seeds: None,
            output: None,
            particles: 100,
            steps: 50,
            action: None,
            resample: true,
            psi_jitter: 0.0,
            filter_noise: Vec::new(),
            env: EnvConfig::Cstr(CstrParams::default()),
        }
    }
}

impl Validate for FilterDemoConfig {
    fn validate(&self) -> Vec<String> {
        let mut p = Vec::new();
        check_positive("particles", self.particles, &mut p);
        check_positive("steps", self.steps, &mut p);
        if !(self.psi_jitter >= 0.0) {
            p.push("psi_jitter: must be nonnegative".into());
        }
        if self.filter_noise.iter().any(|s| !(*s >= 0.0)) {
            p.push("filter_noise: entries must be nonnegative".into());
        }
        if let Some(model) = check_env(&self.env, &mut p) {
            if !self.filter_noise.is_empty() && self.filter_noise.len() != model.state_dim() {
                p.push(format!(
                    "filter_noise: expected {} entries, got {}",
                    model.state_dim(),
                    self.filter_noise.len()
                ));
            }
            if let Some(a) = &self.action {
                if a.len() != model.action_dim() {
                    p.push(format!("action: expected {} entries, got {}", model.action_dim(), a.len()));
                }
            }
        }
        p
    }
}
run_config!(FilterDemoConfig);

pub fn filter_demo(args: &RunArgs) -> Result<String, CliError> {
    let mut p: Prepared<FilterDemoConfig> = prepare("filter-demo", args, load_table(args)?)?;
    let model = EnvModel::from_config(&p.cfg.env)?;
    let bounds = model.bounds().clone();
    let u = match &p.cfg.action {
        Some(a) => DVector::from_vec(a.clone()),
        None if bounds.is_finite() => (&bounds.low + &bounds.high) / 2.0,
        None => DVector::zeros(model.action_dim()),
    };
    let n = model.state_dim();
    let linear = match &model {
        EnvModel::LinearGaussian(lg) => Some(lg.clone()),
        _ => None,
    };
    let mut header: Vec<String> = vec!["t".into()];
    for prefix in ["true", "mean", "min", "max"] {
        header.extend((0..n).map(|i| format!("{prefix}_x{i}")));
    }
    header.push("ess".into());
    if linear.is_some() {
        header.extend((0..n).map(|i| format!("kalman_x{i}")));
    }
    let mut summary = String::new();
    for &seed in &p.seeds.clone() {
        let mut env = substream(seed, "env");
        let mut filt = substream(seed, "filter");
        let psi = match &model {
            EnvModel::LinearGaussian(_) => ScenarioParams::IDENTITY,
            m => m.sample_psi(&mut env),
        };
        let mut x = model.sample_initial_state(&mut env);
        let mut b = ParticleBelief::init_from_prior(&model, p.cfg.particles, &mut filt)?;
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(p.cfg.steps);
        let mut ys = Vec::with_capacity(p.cfg.steps);
        let mut sq_err = 0.0;
        let mut resets = 0;
        for t in 0..p.cfg.steps {
            if t > 0 {
                x = model.transition(&x, &u, psi, &mut env)?;
                b = b.predict(&model, &u, &mut filt)?;
                if !p.cfg.filter_noise.is_empty() {
                    b = b.perturb_states(&p.cfg.filter_noise, &mut filt)?;
                }
            }
            let y = model.measure(&x, &mut env);
            b = match b.update(&model, &y) {
                Ok(post) => post,
                Err(goalctl::Error::DegenerateWeights) => {
                    resets += 1;
                    let prior = ParticleBelief::init_from_prior(&model, p.cfg.particles, &mut filt)?;
                    prior.update(&model, &y).unwrap_or(prior)
                }
                Err(e) => return Err(CliError::Runtime(format!("seed {seed}, step {t}: {e}"))),
            };
            let mean = b.mean_state();
            sq_err += (&mean - &x).norm_squared();
            let mut row = vec![t as f64];
            row.extend(x.iter());
            row.extend(mean.iter());
            let column = |i: usize| b.particles().iter().map(move |pt| pt.state[i]);
            row.extend((0..n).map(|i| column(i).fold(f64::INFINITY, f64::min)));
            row.extend((0..n).map(|i| column(i).fold(f64::NEG_INFINITY, f64::max)));
            row.push(b.ess());
            rows.push(row);
            ys.push(Some(y));
            if t + 1 < p.cfg.steps && p.cfg.resample && b.needs_resampling() {
                b = b.resample(&mut filt);
                if p.cfg.psi_jitter > 0.0 {
                    b = b.jitter_psi(&model, p.cfg.psi_jitter, &mut filt);
                }
            }
        }
        if let Some(lg) = &linear {
            let actions = vec![u.clone(); p.cfg.steps];
            let exact = kalman_filter(lg, &ys, &actions)?;
            for (row, (m, _)) in rows.iter_mut().zip(&exact) {
                row.extend(m.iter());
            }
        }
        let mut csv = header.join(",");
        csv.push('\n');
        for row in &rows {
            let cells: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(j, v)| if j == 0 { format!("{}", *v as usize) } else { v.to_string() })
                .collect();
            csv.push_str(&cells.join(","));
            csv.push('\n');
        }
        p.out.write(&format!("filter_seed{seed}.csv"), csv.as_bytes())?;
        p.out.write_with(&format!("belief_final_seed{seed}.csv"), |w| b.write_csv(w))?;
        let _ = writeln!(
            summary,
            "filter-demo seed {seed}: {} particles, RMSE of the posterior mean against the true state {:.4}, {resets} reset(s)",
            p.cfg.particles,
            (sq_err / p.cfg.steps as f64).sqrt()
        );
    }
    finish("filter-demo", p, summary)
}
