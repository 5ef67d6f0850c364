//! `geneic`: unsupervised prompt-vector learning for image captioning.

mod commands;
mod config;
mod imageio;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "geneic",
    version,
    about = "Unsupervised prompt-vector learning for image captioning",
    propagate_version = true
)]
struct Cli {
    /// TOML config file with [data], [backend], [train], [metrics] sections
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config file, GENEIC_SEED is the fallback
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Embed the corpus in the joint space and cluster it
    Cluster {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Cluster count (default: max(2, N/50))
        #[arg(long)]
        k: Option<usize>,
    },
    /// Decode attribute-transferred images for inspection
    Transfer {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Fraction of latent channels to swap
        #[arg(long)]
        fraction: Option<f64>,
    },
    /// Optimize prompt vectors on an unlabeled corpus
    Train {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        prompt_len: Option<usize>,
        #[arg(long)]
        n_images: Option<usize>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        fraction: Option<f64>,
        #[arg(long)]
        max_len: Option<usize>,
        /// Continue from the newest epoch checkpoint in the output dir
        #[arg(long)]
        resume: bool,
    },
    /// Greedy-caption a corpus with a trained prompt checkpoint
    Caption {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        max_len: Option<usize>,
    },
    /// Score candidate captions against references
    Evaluate {
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        references: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Weight applied inside the joint-space score (2.5 for the
        /// rescaled convention)
        #[arg(long)]
        clip_s_weight: Option<f64>,
    },
    /// Explain learned prompt vectors by retrieval and generation
    Interpret {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref(), cli.seed)?;
    match cli.command {
        Command::Cluster { corpus, out, k } => {
            commands::cmd_cluster(&cfg, corpus.as_deref(), out.as_deref(), k)
        }
        Command::Transfer {
            corpus,
            out,
            fraction,
        } => commands::cmd_transfer(&cfg, corpus.as_deref(), out.as_deref(), fraction),
        Command::Train {
            corpus,
            out,
            epochs,
            batch_size,
            prompt_len,
            n_images,
            beta,
            fraction,
            max_len,
            resume,
        } => {
            if let Some(v) = epochs {
                cfg.train.epochs = v;
            }
            if let Some(v) = batch_size {
                cfg.train.batch_size = v;
            }
            if let Some(v) = prompt_len {
                cfg.train.prompt_len = v;
            }
            if let Some(v) = n_images {
                cfg.train.n_images = v;
            }
            if let Some(v) = beta {
                cfg.train.beta = v;
            }
            if let Some(v) = fraction {
                cfg.train.fraction = v;
            }
            if let Some(v) = max_len {
                cfg.train.max_len = v;
            }
            commands::cmd_train(&cfg, corpus.as_deref(), out.as_deref(), resume)
        }
        Command::Caption {
            corpus,
            checkpoint,
            out,
            max_len,
        } => commands::cmd_caption(&cfg, corpus.as_deref(), &checkpoint, out.as_deref(), max_len),
        Command::Evaluate {
            candidates,
            references,
            corpus,
            out,
            clip_s_weight,
        } => commands::cmd_evaluate(
            &cfg,
            &candidates,
            references.as_deref(),
            corpus.as_deref(),
            out.as_deref(),
            clip_s_weight,
        ),
        Command::Interpret { checkpoint, json } => {
            commands::cmd_interpret(&cfg, &checkpoint, json.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
