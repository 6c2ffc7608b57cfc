//! Command-line front end for the stepwedge library.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 numerical
//! failure, 4 completed with partial results.

mod fit;
mod icc;
mod permute;
mod plot;
mod power;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;
pub const EXIT_PARTIAL: u8 = 4;

/// Stepped-wedge trial simulation and analysis.
#[derive(Parser)]
#[command(name = "stepwedge", version, about, max_term_width = 100)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo study from a TOML configuration.
    Simulate(simulate::SimulateArgs),
    /// Fit one dataset and report every variance estimator.
    Fit(fit::FitArgs),
    /// Convert between ICC specifications and variance components.
    Icc(icc::IccArgs),
    /// Permutation test for the treatment effect on one dataset.
    Permute(permute::PermuteArgs),
    /// Rejection rates (power under nonzero effects) over a scenario grid.
    Power(power::PowerArgs),
}

/// Flags shared by the grid-running subcommands.
#[derive(Args, Clone)]
pub struct RunArgs {
    /// Study configuration (TOML).
    #[arg(long, value_name = "FILE")]
    pub config: PathBuf,
    /// Worker threads for replicate parallelism (default: all cores).
    #[arg(long, value_name = "N")]
    pub threads: Option<usize>,
    /// Override the configured master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the configured replicate count.
    #[arg(long, value_name = "N")]
    pub reps: Option<usize>,
    /// Override the configured two-sided level.
    #[arg(long)]
    pub alpha: Option<f64>,
}

/// Outcome a subcommand hands back to `main` for exit-code mapping.
pub enum Outcome {
    Success,
    /// Finished, but some results are missing (e.g. scenarios whose
    /// replicates all failed, or resumed-over gaps).
    Partial(String),
}

/// Error class carried alongside the message so `main` can pick the
/// documented exit code.
pub enum Failure {
    /// Bad configuration, flags, or input data.
    Config(anyhow::Error),
    /// The computation itself failed (non-convergence, singularities).
    Numerical(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => EXIT_CONFIG,
            Failure::Numerical(_) => EXIT_NUMERICAL,
        }
    }

    fn message(&self) -> &anyhow::Error {
        match self {
            Failure::Config(e) | Failure::Numerical(e) => e,
        }
    }
}

/// Classify a library error: invalid specifications and malformed input
/// are configuration problems; everything else is numerical.
pub fn classify(err: stepwedge::Error) -> Failure {
    use stepwedge::Error as E;
    match &err {
        E::InvalidDimension { .. }
        | E::UnbalancedDesign { .. }
        | E::IndexOutOfRange { .. }
        | E::InvalidSpec(_)
        | E::InfeasibleIcc { .. }
        | E::InvalidConfig(_)
        | E::MalformedDataset(_)
        | E::Io(_)
        | E::Csv(_) => Failure::Config(err.into()),
        _ => Failure::Numerical(err.into()),
    }
}

fn install_thread_pool(threads: Option<usize>) -> Result<(), Failure> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(Failure::Config(anyhow::anyhow!("--threads must be positive")));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Config(anyhow::anyhow!("thread pool: {e}")))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    // Die quietly when a downstream pipe closes (e.g. `stepwedge … | head`)
    // instead of panicking on the failed write.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate(args) => {
            install_thread_pool(args.run.threads).and_then(|()| simulate::run(&args))
        }
        Command::Fit(args) => fit::run(&args),
        Command::Icc(args) => icc::run(&args),
        Command::Permute(args) => permute::run(&args),
        Command::Power(args) => {
            install_thread_pool(args.run.threads).and_then(|()| power::run(&args))
        }
    };
    match outcome {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::Partial(detail)) => {
            eprintln!("partial results: {detail}");
            ExitCode::from(EXIT_PARTIAL)
        }
        Err(failure) => {
            eprintln!("error: {:#}", failure.message());
            ExitCode::from(failure.code())
        }
    }
}
