use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dusego_cli::commands::{diagnose_cmd, eval_cmd, gen_graphs, gen_nbody, train_cmd};
use dusego_cli::config::ExperimentConfig;
use dusego_cli::CliError;

/// Equivariant second-order graph ODE experiments.
///
/// Relative data and output paths resolve against $DUSEGO_OUT_ROOT when it is set.
#[derive(Parser)]
#[command(name = "dusego", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate charged-particle trajectories and write the dataset splits.
    GenNbody {
        #[command(flatten)]
        common: Common,
        /// Master seed; sample k uses seed + k.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sample random graphs for the autoencoder task.
    GenGraphs {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the configured models, one run per seed.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Also write wall-clock timings (not reproducible).
        #[arg(long)]
        timings: bool,
    },
    /// Re-evaluate saved checkpoints on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Energy profiles, equivariance checks or gradient probes.
    Diagnose {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long, value_delimiter = ',')]
        depth_list: Option<Vec<usize>>,
    },
}

fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::GenNbody { common, seed } => {
            let cfg = ExperimentConfig::load(&common.config)?;
            let dir = gen_nbody(&cfg, seed, common.out.as_deref())?;
            Ok(format!("wrote {}", dir.display()))
        }
        Command::GenGraphs { common, seed } => {
            let cfg = ExperimentConfig::load(&common.config)?;
            let dir = gen_graphs(&cfg, seed, common.out.as_deref())?;
            Ok(format!("wrote {}", dir.display()))
        }
        Command::Train { common, seeds, timings } => {
            let cfg = ExperimentConfig::load(&common.config)?;
            let summary = train_cmd(&cfg, seeds.as_deref(), common.out.as_deref(), timings)?;
            Ok(serde_json::to_string_pretty(&summary)?)
        }
        Command::Eval { common, seeds } => {
            let cfg = ExperimentConfig::load(&common.config)?;
            let evals = eval_cmd(&cfg, seeds.as_deref(), common.out.as_deref())?;
            Ok(serde_json::to_string_pretty(&evals)?)
        }
        Command::Diagnose { common, seeds, depth_list } => {
            let cfg = ExperimentConfig::load(&common.config)?;
            let dir = diagnose_cmd(&cfg, depth_list.as_deref(), seeds.as_deref(), common.out.as_deref())?;
            Ok(format!("wrote {}", dir.display()))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
