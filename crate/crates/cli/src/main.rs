mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Error in the user's configuration or inputs; exits with code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Parser)]
#[command(
    name = "bcmppi",
    version,
    about = "Feasibility-weighted MPPI for a quadrotor"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Common {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Dotted-key override, e.g. `mppi.num_samples=500`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to every core.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output directory; overrides the config and BCMPPI_OUT_DIR.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate labelled rollouts for surrogate training.
    GenerateData {
        #[command(flatten)]
        common: Common,
        /// Number of rollouts.
        #[arg(short = 'n', long)]
        rollouts: Option<usize>,
        /// Circular:diagonal:sinusoidal ratio, e.g. 2:2:1.
        #[arg(long)]
        mix: Option<String>,
    },
    /// Train the surrogate ensemble on a dataset.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Run one closed-loop episode.
    Run {
        #[command(flatten)]
        common: Common,
        /// Also write the per-step trace CSV.
        #[arg(long)]
        trace: bool,
        /// Also write the per-step sampler diagnostics CSV.
        #[arg(long)]
        diagnostics: bool,
    },
    /// Run the controller × K × seed grid.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Plot metrics from sweep CSVs.
    Report {
        /// Per-episode CSVs written by `sweep`.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Output directory; defaults to `$BCMPPI_OUT_DIR/report`.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use bcmppi::Error as E;
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Config(_)
                | E::Schema { .. }
                | E::Parse(_)
                | E::LengthMismatch { .. }
                | E::HorizonMismatch { .. }
                | E::ModelNotLoaded
                | E::Model(_)
                | E::EmptyDataset => 2,
                _ => 3,
            };
        }
    }
    3
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenerateData {
            common,
            rollouts,
            mix,
        } => commands::generate_data(&common, rollouts, mix.as_deref()),
        Command::Train { common } => commands::train(&common),
        Command::Run {
            common,
            trace,
            diagnostics,
        } => commands::run(&common, trace, diagnostics),
        Command::Sweep { common } => commands::sweep(&common),
        Command::Report { inputs, out } => commands::report(&inputs, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
