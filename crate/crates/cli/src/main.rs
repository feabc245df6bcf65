use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use local_dsm_cli::{init_threads, resolve_config, run_diag, run_eval, run_sample, run_train};

#[derive(Parser)]
#[command(name = "local-dsm", version, about = "Local denoising score matching experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON); a run's config.json is accepted too.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in experiment: checkerboard, active_swimmer, or ips.
    #[arg(long)]
    preset: Option<String>,
    /// Dotted-path override such as train.steps=1000; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train a score model.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from a checkpoint of the same configuration.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Generate samples from a checkpoint.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Score a checkpoint (MMD², and ELBO when a prior is configured).
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Linearization diagnostics: mean error by schedule and the KL bound.
    Diag {
        #[command(flatten)]
        common: Common,
    },
}

fn config_of(c: &Common) -> Result<local_dsm_cli::ExperimentConfig> {
    resolve_config(c.config.as_deref(), c.preset.as_deref(), &c.sets)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    init_threads()?;
    match cli.command {
        Command::Train { common, resume } => {
            let out = run_train(config_of(&common)?, &common.out, resume.as_deref())?;
            let last = out.records.iter().rev().find(|r| r.name == "loss");
            eprintln!(
                "trained to step {} in {:.1} s of optimization{}",
                out.checkpoint.step,
                out.train_seconds,
                last.map(|r| format!(", final loss {:.6}", r.value)).unwrap_or_default()
            );
        }
        Command::Sample { common, checkpoint } => {
            let path = run_sample(config_of(&common)?, &checkpoint, &common.out)?;
            eprintln!("wrote {}", path.display());
        }
        Command::Eval { common, checkpoint } => {
            for r in run_eval(config_of(&common)?, &checkpoint, &common.out)? {
                println!("{} {} {}", r.name, r.value, serde_json::to_string(&r.meta)?);
            }
        }
        Command::Diag { common } => {
            for r in run_diag(config_of(&common)?, &common.out)? {
                println!("{} {} {}", r.name, r.value, serde_json::to_string(&r.meta)?);
            }
        }
    }
    Ok(())
}
