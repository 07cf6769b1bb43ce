//! `vidcompress`: batch front end for funnels, temporal-block pruning, the
//! toy UNet, motion descriptors and the property suite.
//!
//! Exit codes: 0 success, 1 invariant failure, 2 usage error, 3 I/O error.

mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use report::Report;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] vidcompress_core::Error),

    #[error("{0}")]
    Usage(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_io() => 3,
            _ => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "vidcompress",
    version,
    about = "Compression toolkit for spatio-temporal denoising UNets"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Seed of the command's random generator.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// JSON config for the command (toyrun: network spec, verify: suite
    /// sizes, motion: bucket mapping).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Directory for the report and any written artifacts.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Print the JSON report instead of a summary.
    #[arg(long, global = true)]
    pub json: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Coupled singular initialization of funnels for layer pairs.
    Csi(commands::CsiArgs),
    /// Fold a funnel bundle into a weights manifest.
    Merge(commands::MergeArgs),
    /// Inclusion probabilities from block importances.
    PruneSolve(commands::PruneSolveArgs),
    /// Fixed-size sampling frequencies for inclusion probabilities.
    Sample(commands::SampleArgs),
    /// Build and run the toy UNet; report output digest and FLOPs.
    Toyrun(commands::ToyrunArgs),
    /// Singular-value motion descriptor of a clip.
    Motion(commands::MotionArgs),
    /// Run the property suites.
    Verify(commands::VerifyArgs),
}

/// Activation between the two layers of a pair.
#[derive(Clone, Copy, Debug, Default, ValueEnum)]
pub enum NonlinearityArg {
    #[default]
    Identity,
    Relu,
    Silu,
}

impl From<NonlinearityArg> for vidcompress_core::nn::Nonlinearity {
    fn from(a: NonlinearityArg) -> Self {
        use vidcompress_core::nn::Nonlinearity;
        match a {
            NonlinearityArg::Identity => Nonlinearity::Identity,
            NonlinearityArg::Relu => Nonlinearity::Relu,
            NonlinearityArg::Silu => Nonlinearity::Silu,
        }
    }
}

fn dispatch(cli: &Cli) -> Result<Report, CliError> {
    let g = &cli.global;
    match &cli.command {
        Command::Csi(a) => commands::csi(g, a),
        Command::Merge(a) => commands::merge(g, a),
        Command::PruneSolve(a) => commands::prune_solve(g, a),
        Command::Sample(a) => commands::sample(g, a),
        Command::Toyrun(a) => commands::toyrun(g, a),
        Command::Motion(a) => commands::motion(g, a),
        Command::Verify(a) => commands::verify(g, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let start = Instant::now();
    let report = match dispatch(&cli) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code());
        }
    };
    log::info!("{} finished in {:.3?}", report.command, start.elapsed());
    if let Some(dir) = &cli.global.out {
        if let Err(e) = report.write(dir) {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code());
        }
    }
    if cli.global.json {
        print!("{}", report.to_json());
    } else {
        print!("{}", report.summary());
    }
    if report.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
