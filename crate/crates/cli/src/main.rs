mod commands;
mod config;
mod error;
mod logging;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Ctx;
use crate::config::Config;
use crate::error::CliError;
use crate::manifest::StageStatus;

/// Molecular property prediction with GNN and LLM teachers distilled into
/// an MLP.
#[derive(Parser)]
#[command(name = "gallon", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set distill.alpha=0.1`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Answer LLM prompts from the cache only.
    #[arg(long, global = true)]
    offline: bool,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Parallel grid cells.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Plain-text warnings and errors instead of JSON logs.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Parse the dataset and report graph statistics.
    Featurize,
    /// Scaffold split into train/valid/test indices.
    Split,
    /// Build the LLM prompt for every molecule.
    Prompt,
    /// Ask the LLM, through the response cache.
    Query,
    /// Embed LLM answers with the configured provider.
    Embed,
    /// Train the GCN teacher.
    TrainGnn,
    /// Train the prediction head on LLM embeddings.
    TrainLmHead,
    /// Train the student MLP with both teachers.
    Distill,
    /// Search distillation weights on the validation split.
    Grid,
    /// Score the student and the GCN on every split.
    Eval,
    /// Time inference of the student and the GCN.
    Bench,
    /// All stages in order, skipping those that are up to date.
    Pipeline,
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let mut overrides = cli.overrides.clone();
    if cli.offline {
        overrides.push("llm.offline=true".into());
    }
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    let config = Config::load(cli.config.as_deref(), &overrides)?;
    let ctx = Ctx {
        config,
        out_dir: cli.out_dir.clone(),
        jobs: cli.jobs.max(1),
    };
    let single = |name: &str, status: StageStatus| {
        let word = match status {
            StageStatus::Ran => "done",
            StageStatus::UpToDate => "up to date",
        };
        println!("{name}: {word} ({})", ctx.out_dir.join(name).display());
    };
    match cli.command {
        Command::Featurize => single("featurize", commands::featurize(&ctx)?),
        Command::Split => single("split", commands::split(&ctx)?),
        Command::Prompt => single("prompt", commands::prompt(&ctx)?),
        Command::Query => single("query", commands::query(&ctx)?),
        Command::Embed => single("embed", commands::embed(&ctx)?),
        Command::TrainGnn => single("train-gnn", commands::train_gnn(&ctx)?),
        Command::TrainLmHead => single("train-lm-head", commands::train_lm_head_stage(&ctx)?),
        Command::Distill => single("distill", commands::distill(&ctx)?),
        Command::Grid => single("grid", commands::grid(&ctx)?),
        Command::Eval => single("eval", commands::eval(&ctx)?),
        Command::Bench => single("bench", commands::bench(&ctx)?),
        Command::Pipeline => {
            for (name, status) in commands::pipeline(&ctx)? {
                single(name, status);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    logging::init(cli.quiet);
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            if !cli.quiet {
                eprintln!("error: {e}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
