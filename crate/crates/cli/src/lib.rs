//! Command-line experiment runner.
//!
//! Every subcommand reads a TOML config, validates it completely before any
//! compute, writes CSV artifacts into an output directory and finishes with
//! a `manifest.toml` listing the config hash, seeds and every file written.
//! Exit codes: 0 on success, 1 on usage or validation errors, 2 on runtime
//! failures.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod plot;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    /// Every problem found in the configuration.
    Validation(Vec<String>),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Validation(errs) => {
                writeln!(f, "invalid configuration ({} problem(s)):", errs.len())?;
                for e in errs {
                    writeln!(f, "  - {e}")?;
                }
                Ok(())
            }
            CliError::Runtime(m) => write!(f, "runtime failure: {m}"),
        }
    }
}

impl From<goalctl::Error> for CliError {
    fn from(e: goalctl::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "goalctl", version, about = "Goal-oriented control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by the compute subcommands.
#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// TOML config file; built-in defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seeds: `0..99` (inclusive), `0..=99` or `1,4,9`. Overrides the config.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Output directory. Defaults to `$GOALCTL_OUT/<command>-<config hash>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Monte-Carlo check of the log-density Jensen bound under a linear policy.
    VerifyThm1(RunArgs),
    /// Monte-Carlo check of the quadratic-cost bound for random SPD weights.
    VerifyCor2(RunArgs),
    /// Grid-DP goal-oriented policy against the LQR policy on a scalar system.
    Corollary1Study(RunArgs),
    /// Differentiable predictive control on the double pendulum.
    Dpc {
        #[command(flatten)]
        run: RunArgs,
        /// `goal` or `quadratic`.
        #[arg(long)]
        objective: Option<String>,
        /// `adam` or `soap`.
        #[arg(long)]
        optimizer: Option<String>,
    },
    /// Trains and evaluates the particle actor-critic agents on the CSTR.
    RlTrain(RunArgs),
    /// Re-evaluates checkpoints written by `rl-train`.
    RlEval {
        #[command(flatten)]
        run: RunArgs,
        /// Output directory of an `rl-train` run.
        #[arg(long)]
        from: PathBuf,
        /// Evaluate each agent in its own training regime instead of the
        /// common fixed-parameter environment.
        #[arg(long)]
        regime_env: bool,
    },
    /// Runs the particle filter along one simulated trajectory per seed.
    FilterDemo(RunArgs),
    /// Renders an SVG figure from a CSV artifact.
    Plot {
        /// dip-profile, cstr-trace, time-near-goal or learning-curve.
        #[arg(long)]
        kind: String,
        /// Input CSV; dip-profile and learning-curve accept several.
        #[arg(long = "in", required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        title: Option<String>,
    },
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(summary) => {
            print!("{summary}");
            0
        }
        Err(e) => {
            eprint!("{e}");
            if !matches!(e, CliError::Validation(_)) {
                eprintln!();
            }
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<String, CliError> {
    match cmd {
        Command::VerifyThm1(a) => commands::verify_thm1(&a),
        Command::VerifyCor2(a) => commands::verify_cor2(&a),
        Command::Corollary1Study(a) => commands::corollary1_study(&a),
        Command::Dpc { run, objective, optimizer } => {
            commands::dpc(&run, objective.as_deref(), optimizer.as_deref())
        }
        Command::RlTrain(a) => commands::rl_train(&a),
        Command::RlEval { run, from, regime_env } => commands::rl_eval(&run, &from, regime_env),
        Command::FilterDemo(a) => commands::filter_demo(&a),
        Command::Plot { kind, input, out, title } => plot::plot_command(&kind, &input, &out, title.as_deref()),
    }
}
