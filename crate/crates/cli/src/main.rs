use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thyme_core::Error;

mod commands;
mod config;

use commands::Axis;
use config::RunConfig;

/// Video scene graph generation on synthetic aerial scenes.
#[derive(Parser, Debug)]
#[command(name = "thyme", version)]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true, env = "THYME_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (the dataset directory for `synth`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset.
    Synth,
    /// Train with plain SGD and write a checkpoint and loss curve.
    Train,
    /// Evaluate a checkpoint and write recall reports.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Compare reverse-mode gradients with finite differences.
    Gradcheck {
        /// Added to every analytic gradient entry.
        #[arg(long, hide = true, default_value_t = 0.0)]
        corrupt_gradient: f64,
    },
    /// Train and evaluate one run per value of an ablation axis.
    Ablate {
        #[arg(long, value_enum)]
        axis: Axis,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::MissingFile(_) => 3,
        Error::Divergence { .. } => 1,
        _ => 2,
    }
}

fn run(cli: Cli) -> Result<bool, Error> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(data) = cli.data {
        cfg.data = data;
    }
    if let Command::Synth = cli.command {
        let dir = cli.out.unwrap_or_else(|| cfg.data.clone());
        cfg.validate()?;
        print!("{}", commands::synth(&cfg, &dir)?);
        return Ok(true);
    }
    if let Some(out) = cli.out {
        cfg.out = out;
    }
    if let Command::Eval { checkpoint: Some(c) } = &cli.command {
        cfg.checkpoint = Some(c.clone());
    }
    cfg.validate()?;
    match cli.command {
        Command::Synth => unreachable!("handled above"),
        Command::Train => print!("{}", commands::train_cmd(&cfg)?),
        Command::Eval { .. } => print!("{}", commands::eval_cmd(&cfg)?.0),
        Command::Gradcheck { corrupt_gradient } => {
            let (report, passed) = commands::gradcheck_cmd(&cfg, corrupt_gradient)?;
            print!("{report}");
            return Ok(passed);
        }
        Command::Ablate { axis } => print!("{}", commands::ablate_cmd(&cfg, axis)?),
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
