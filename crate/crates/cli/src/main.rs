use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use flashpoint_cli::commands;
use flashpoint_cli::config::{self, Overrides};
use flashpoint_cli::error::CliError;

#[derive(Parser)]
#[command(
    name = "flashpoint",
    version,
    about = "Flash-process simulator and checker"
)]
struct Cli {
    /// TOML run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    trajectories: Option<usize>,
    #[arg(long, global = true, value_parser = clap::value_parser!(u8).range(1..=3))]
    quadrature_level: Option<u8>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample GRWf trajectories
    Simulate,
    /// Sample relativistic flashes on a 1+1 Dirac lattice
    Rgrwf,
    /// Numerical checks on the configured model
    Check {
        #[command(subcommand)]
        what: CheckKind,
    },
    /// Rebuild collapse and evolution operators from the history densities
    Reconstruct {
        /// Also report the density round-trip deviation
        #[arg(long)]
        roundtrip: bool,
    },
    /// Triangular binary field with the triple law
    CkDemo,
    /// Statistics over a record file
    Stats {
        #[arg(long)]
        input: Option<PathBuf>,
        /// Rate of the reference exponential
        #[arg(long)]
        rate: Option<f64>,
    },
}

#[derive(Subcommand)]
enum CheckKind {
    /// Normalization and consistency of the history POVM
    Povm,
    /// Invariance of the history densities under gauge transformations
    Gauge,
}

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("FLASHPOINT_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .map_err(|_| CliError::Config(format!("FLASHPOINT_THREADS: not a thread count: {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("FLASHPOINT_THREADS: {e}")))
}

fn run(cli: Cli) -> Result<serde_json::Value, CliError> {
    init_threads()?;
    let overrides = Overrides {
        seed: cli.seed,
        out: cli.out,
        trajectories: cli.trajectories,
        quadrature_level: cli.quadrature_level.map(usize::from),
    };
    let cfg = config::load(cli.config.as_deref(), &overrides)?;
    match cli.command {
        Command::Simulate => commands::simulate(&cfg),
        Command::Rgrwf => commands::rgrwf(&cfg),
        Command::Check {
            what: CheckKind::Povm,
        } => commands::check_povm(&cfg),
        Command::Check {
            what: CheckKind::Gauge,
        } => commands::check_gauge(&cfg),
        Command::Reconstruct { roundtrip } => commands::reconstruct(&cfg, roundtrip),
        Command::CkDemo => commands::ck_demo(&cfg),
        Command::Stats { input, rate } => commands::stats_suite(&cfg, input.as_deref(), rate),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(report) => {
            // A closed pipe downstream is not a failure of the run.
            let _ = writeln!(
                std::io::stdout(),
                "{}",
                serde_json::to_string_pretty(&report).expect("report serializes")
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("flashpoint: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
