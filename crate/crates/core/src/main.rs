use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use nhop_eql::commands::{execute, Baseline, Command, CommandOptions};

/// Multi-timescale ensemble Q-learning experiments.
#[derive(Debug, Parser)]
#[command(name = "nhop-eql", version)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Debug, Subcommand)]
enum Sub {
    /// Estimate the transition model and its error at sample milestones.
    Estimate(Args),
    /// Train the ensemble, optionally alongside a baseline.
    Train(Args),
    /// Run the configured analysis checks.
    Verify(Args),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BaselineArg {
    Simple,
    Vi,
}

#[derive(Debug, clap::Args)]
struct Args {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides NHOP_EQL_OUT and the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Baseline trained at the ensemble's iteration budget (train only).
    #[arg(long, value_enum)]
    baseline: Option<BaselineArg>,
    /// Also write SVG line plots.
    #[arg(long)]
    plots: bool,
    /// Directory for estimated model files (estimate only).
    #[arg(long)]
    estimation_out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Sub::Estimate(a) => (Command::Estimate, a),
        Sub::Train(a) => (Command::Train, a),
        Sub::Verify(a) => (Command::Verify, a),
    };
    let opts = CommandOptions {
        out: args.out,
        baseline: args.baseline.map(|b| match b {
            BaselineArg::Simple => Baseline::Simple,
            BaselineArg::Vi => Baseline::Vi,
        }),
        plots: args.plots,
        estimation_out: args.estimation_out,
    };
    match execute(command, &args.config, &opts) {
        Ok(outcome) => ExitCode::from(outcome.exit_code() as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
