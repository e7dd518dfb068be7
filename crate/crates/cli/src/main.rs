use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod play;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Schema(String),
    #[error(transparent)]
    Core(#[from] pomdp_design::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use pomdp_design::Error as E;
        fn core(e: &E) -> u8 {
            match e {
                E::Replication { source, .. } => core(source),
                E::BudgetExceeded { .. } => 3,
                E::NonFiniteObjective(_)
                | E::NoConvergence { .. }
                | E::DiscretizationUnderflow { .. }
                | E::EmissionUnderflow { .. }
                | E::AllImpossible
                | E::PosteriorAnnihilated
                | E::ImpossibleObservation { .. }
                | E::ImpossibleWindow { .. }
                | E::InvalidModel(_) => 4,
                E::Io(_) => 1,
                _ => 2,
            }
        }
        match self {
            CliError::Schema(_) => 2,
            CliError::Core(e) => core(e),
            CliError::Io(_) => 1,
        }
    }
}

/// Fisher-Information-maximizing control design for finite POMDPs.
#[derive(Debug, Parser)]
#[command(name = "pomdp-design", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random draw; overrides `study.base_seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Use `study.slow_reps` replications (full-scale runs).
    #[arg(long, global = true)]
    slow: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve for a policy and write it as CSV plus a JSON sidecar.
    Solve,
    /// Run a replicated simulate-and-estimate study.
    Study,
    /// Simulate one adaptive run with value iteration re-solved every step.
    ViaRun,
    /// Play the adversarial game against the solver on stdin/stdout.
    Play,
    /// Write the model at `theta.value` in the tensor file format.
    ExportModel,
    /// Check the config and the model's stochasticity.
    Validate,
}

pub struct Opts {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub slow: bool,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::Schema(format!("--threads: {e}")))?;
    }
    let opts = Opts {
        config: cli.config.ok_or_else(|| CliError::Schema("--config PATH is required".into()))?,
        seed: cli.seed,
        out: cli.out,
        slow: cli.slow,
    };
    match cli.command {
        Command::Solve => commands::solve(&opts),
        Command::Study => commands::study(&opts),
        Command::ViaRun => commands::via_run(&opts),
        Command::Play => play::play(&opts, &mut std::io::stdin().lock(), &mut std::io::stdout().lock()),
        Command::ExportModel => commands::export_model(&opts),
        Command::Validate => commands::validate(&opts),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
