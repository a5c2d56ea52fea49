//! Command-line driver: train sharpness-controlled models, explain them,
//! measure the frequency content of the explanations, and run the kernel
//! verification suites.

mod cmd_ef;
mod cmd_explain;
mod cmd_gap;
mod cmd_kernellab;
mod cmd_sweep;
mod cmd_train;
mod recipes;
mod support;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use support::{CliError, Global};

#[derive(Parser)]
#[command(
    name = "specxai",
    version,
    about = "Sharpness-controlled nets and the frequency content of their explanations"
)]
struct Cli {
    /// Worker threads (0 = automatic). The SPECXAI_JOBS variable overrides.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Suppress timestamp headers so reruns are byte-identical.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model on a bundled recipe
    Train(cmd_train::TrainArgs),
    /// Write saliency maps for a trained model
    Explain(cmd_explain::ExplainArgs),
    /// Expected-frequency report for a directory of maps
    Ef(cmd_ef::EfArgs),
    /// Frequency gap of explanation methods against a gradient baseline
    Gap(cmd_gap::GapArgs),
    /// Deterministic kernel verification suites
    Kernellab(cmd_kernellab::KernellabArgs),
    /// Train-and-explain grid over sharpness values and seeds
    Sweep(cmd_sweep::SweepArgs),
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let jobs = support::init_jobs(cli.jobs)?;
    let global = Global { jobs, deterministic: cli.deterministic };
    match cli.command {
        Command::Train(args) => cmd_train::run(&args, &global),
        Command::Explain(args) => cmd_explain::run(&args, &global),
        Command::Ef(args) => cmd_ef::run(&args, &global),
        Command::Gap(args) => cmd_gap::run(&args, &global),
        Command::Kernellab(args) => cmd_kernellab::run(&args, &global),
        Command::Sweep(args) => cmd_sweep::run(&args, &global),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            e.exit()
        }
        Err(e) => {
            eprint!("{e}");
            std::process::exit(1);
        }
    };
    if let Err(e) = dispatch(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.code());
    }
}
