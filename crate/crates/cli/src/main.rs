//! `convfy`: regret-bound campaigns, numerical checks and a training demo.
//!
//! Exit status is 0 when every check passes, 1 when a check is violated or a
//! solver fails, and 2 on usage errors.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use convfy::harness::{
    self, FisherConfig, GradCheckConfig, LinkChoice, PropertyConfig, TaskSpec, TrainConfig, VerifyConfig,
};
use convfy::links::{pi_argmax_link, randomized_link, sparsified_link};
use convfy::{conv_conjugate_grad, EntropyKind, Error, PiSolution};

#[derive(Parser)]
#[command(
    name = "convfy",
    version,
    about = "Convolutional Fenchel-Young loss verification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the linear surrogate regret bound on random scores and distributions.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = LinkArg::Argmax)]
        link: LinkArg,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        /// Include per-trial records in the report.
        #[arg(long)]
        records: bool,
    },
    /// Compare loss gradients with central finite differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = harness::GRAD_CHECK_STEP)]
        step: f64,
    },
    /// Convexity, smoothness, nonnegativity, regret decomposition and vertex dominance.
    Propcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
    },
    /// Recover E[ρ(y)] from the surrogate risk minimizer.
    Fishercheck {
        #[command(flatten)]
        common: Common,
        /// Number of class distributions.
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 100_000)]
        gd_steps: usize,
        #[arg(long, default_value_t = 1.0)]
        lr: f64,
    },
    /// Train a linear model on synthetic data and write the per-epoch trace as CSV.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 500)]
        samples: usize,
        #[arg(long, default_value_t = 5)]
        features: usize,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        #[arg(long, default_value_t = 0.5)]
        lr: f64,
    },
    /// Solve the inner simplex problem for one score vector.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Comma-separated scores.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        theta: Vec<f64>,
        #[arg(long, value_enum, default_value_t = LinkArg::Argmax)]
        link: LinkArg,
    },
}

#[derive(Args)]
struct Common {
    /// multiclass:K, hamming:D, topk:K:k or matrix:FILE (K rows, N columns).
    #[arg(long)]
    task: TaskSpec,
    #[arg(long, value_enum, default_value_t = EntropyArg::Shannon)]
    entropy: EntropyArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Stationarity tolerance of the inner solver.
    #[arg(long, default_value_t = convfy::conv_conjugate::DEFAULT_TOL)]
    tol: f64,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum EntropyArg {
    Shannon,
    Sqnorm,
}

impl From<EntropyArg> for EntropyKind {
    fn from(e: EntropyArg) -> Self {
        match e {
            EntropyArg::Shannon => EntropyKind::Shannon,
            EntropyArg::Sqnorm => EntropyKind::SquaredNorm,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LinkArg {
    Argmax,
    Sparse,
    Random,
}

impl From<LinkArg> for LinkChoice {
    fn from(l: LinkArg) -> Self {
        match l {
            LinkArg::Argmax => LinkChoice::Argmax,
            LinkArg::Sparse => LinkChoice::Sparse,
            LinkArg::Random => LinkChoice::Random,
        }
    }
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::ConvergenceFailure { .. } | Error::Internal(_) => Failure::Runtime(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => fs::write(p, text)?,
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Runtime(e.to_string()))?;
    text.push('\n');
    emit(out, &text)
}

#[derive(Serialize)]
struct SolveOutput<'a> {
    task: String,
    entropy: EntropyKind,
    theta: &'a [f64],
    solution: &'a PiSolution,
    /// `∇Ω_T*(θ)`.
    gradient: Vec<f64>,
    link: LinkChoice,
    /// 1-based prediction index.
    prediction: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    prediction_bits: Option<Vec<u8>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    prediction_subset: Option<Vec<usize>>,
}

/// Runs a command and reports whether every check passed.
fn run(cli: Cli) -> Result<bool, Failure> {
    match cli.command {
        Command::Verify {
            common,
            link,
            trials,
            records,
        } => {
            let mut config = VerifyConfig::new(
                common.task,
                common.entropy.into(),
                link.into(),
                trials,
                common.seed,
            );
            config.solver_tol = common.tol;
            let mut report = harness::verify_bounds(&config)?;
            if !records {
                report.records = None;
            }
            emit_json(common.out.as_deref(), &report)?;
            Ok(report.passed())
        }
        Command::Gradcheck { common, trials, step } => {
            let report = harness::grad_check(&GradCheckConfig {
                task: common.task,
                entropy: common.entropy.into(),
                samples: trials,
                seed: common.seed,
                step,
                solver_tol: common.tol,
            })?;
            emit_json(common.out.as_deref(), &report)?;
            Ok(report.passed)
        }
        Command::Propcheck { common, trials } => {
            let report = harness::property_check(&PropertyConfig {
                task: common.task,
                entropy: common.entropy.into(),
                samples: trials,
                seed: common.seed,
                solver_tol: common.tol,
            })?;
            emit_json(common.out.as_deref(), &report)?;
            Ok(report.passed)
        }
        Command::Fishercheck {
            common,
            trials,
            gd_steps,
            lr,
        } => {
            let report = harness::fisher_check(&FisherConfig {
                task: common.task,
                entropy: common.entropy.into(),
                eta_samples: trials,
                seed: common.seed,
                gd_steps,
                gd_lr: lr,
                solver_tol: common.tol,
            })?;
            emit_json(common.out.as_deref(), &report)?;
            Ok(report.passed)
        }
        Command::Train {
            common,
            samples,
            features,
            epochs,
            lr,
        } => {
            let n = common.task.build()?.num_predictions() as f64;
            let trace = harness::train_synthetic(&TrainConfig {
                task: common.task,
                entropy: common.entropy.into(),
                n_samples: samples,
                n_features: features,
                epochs,
                lr,
                seed: common.seed,
                solver_tol: common.tol,
            })?;
            match &common.out {
                Some(p) => harness::write_trace(p, &trace)?,
                None => harness::write_trace_to(io::stdout().lock(), &trace)?,
            }
            let violations = trace
                .iter()
                .filter(|r| r.mean_target_regret > n * r.mean_surrogate_regret + harness::BOUND_SLACK)
                .count();
            if let (Some(first), Some(last)) = (trace.first(), trace.last()) {
                eprintln!(
                    "surrogate regret {:.6} -> {:.6}, target regret {:.6} -> {:.6}, {violations} epochs above the bound",
                    first.mean_surrogate_regret,
                    last.mean_surrogate_regret,
                    first.mean_target_regret,
                    last.mean_target_regret,
                );
            }
            Ok(violations == 0)
        }
        Command::Solve { common, theta, link } => {
            let fy = harness::build_loss(&common.task, common.entropy.into(), common.tol)?;
            let sol = fy.solve(&theta)?;
            let link: LinkChoice = link.into();
            let prediction = match link {
                LinkChoice::Argmax => pi_argmax_link(&sol),
                LinkChoice::Sparse => sparsified_link(fy.target(), &sol)?,
                LinkChoice::Random => randomized_link(&sol, common.seed),
            }
            .prediction;
            let output = SolveOutput {
                task: common.task.to_string(),
                entropy: common.entropy.into(),
                theta: &theta,
                solution: &sol,
                gradient: conv_conjugate_grad(fy.omega(), &sol),
                link,
                prediction: prediction + 1,
                prediction_bits: fy.target().bits(prediction),
                prediction_subset: fy
                    .target()
                    .subset(prediction)
                    .map(|s| s.into_iter().map(|c| c + 1).collect()),
            };
            emit_json(common.out.as_deref(), &output)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
