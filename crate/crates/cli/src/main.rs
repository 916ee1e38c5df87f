mod commands;
mod config;
mod dataset;
mod error;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::commands::Context;
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

/// Imagined-goal rearrangement pipeline: data generation, training,
/// evaluation, ablations and artifact inspection.
#[derive(Debug, Parser)]
#[command(name = "i2a", version)]
struct Cli {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "I2A_OUT")]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for `ablate`.
    #[arg(long, global = true, env = "I2A_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Rigidly registers two PLY clouds.
    Register {
        src: PathBuf,
        dst: PathBuf,
        /// Use ICP from a centroid alignment instead of index pairing.
        #[arg(long)]
        icp: bool,
    },
    /// Builds an imagined goal for one scene with the oracle adapters.
    Synthesize {
        /// Scene description (JSON).
        #[arg(long)]
        scene: PathBuf,
        /// Adapter noise (JSON); the config noise is used when omitted.
        #[arg(long)]
        noise: Option<PathBuf>,
    },
    /// Records expert demonstrations with goal conditioning.
    GenData,
    /// Trains a policy on a generated dataset.
    Train {
        /// Dataset directory or its manifest.
        #[arg(long)]
        data: PathBuf,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop once this many epochs are complete.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Closed-loop evaluation on held-out scenes.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "policy")]
        mode: EvalMode,
    },
    /// Trains and evaluates every configured variant on every seed.
    Ablate,
    /// Prints an artifact; clouds and frames can be exported to PLY.
    Inspect {
        path: PathBuf,
        #[arg(long)]
        ply: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalMode {
    Policy,
    Expert,
    Random,
}

fn resolve(cli: &Cli) -> CliResult<Context> {
    let mut config = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if let Some(o) = &cli.out {
        config.out_dir = Some(o.clone());
    }
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        config.threads = t;
    }
    let path = cli.config.clone().unwrap_or_default();
    config.validate(&path)?;
    Ok(Context {
        config,
        config_path: cli.config.clone(),
        args: std::env::args().skip(1).collect(),
    })
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let ctx = resolve(&cli)?;
    match cli.command {
        Command::Register { src, dst, icp } => commands::register(&ctx, &src, &dst, icp),
        Command::Synthesize { scene, noise } => {
            commands::synthesize(&ctx, &scene, noise.as_deref())
        }
        Command::GenData => commands::gen_data(&ctx),
        Command::Train {
            data,
            resume,
            stop_after,
        } => commands::train(&ctx, &data, resume.as_deref(), stop_after),
        Command::Eval { checkpoint, mode } => commands::eval(&ctx, checkpoint.as_deref(), mode),
        Command::Ablate => commands::ablate(&ctx),
        Command::Inspect { path, ply } => commands::inspect(&path, ply.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e:#}", e.kind());
            ExitCode::from(e.exit_code())
        }
    }
}
