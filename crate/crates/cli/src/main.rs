//! `mufi`: generate a synthetic world, build the label space, train
//! teachers and students, and evaluate them.

mod commands;
mod manifest;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mufi_core::config::{RunConfig, Source};
use mufi_core::{ErrorKind, MufiError, Result};

use commands::{Ctx, Status};

#[derive(Debug, Parser)]
#[command(
    name = "mufi",
    version,
    about = "Multi-facet video-semantic embedding on synthetic worlds"
)]
struct Cli {
    /// `key = value` config file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one config key; repeatable. Wins over the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Shorthand for `--set seed=N`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for training. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    /// Machine-readable output on stdout.
    #[arg(long, global = true)]
    json: bool,

    /// Directory holding the run's artifacts.
    #[arg(long, global = true, default_value = "run")]
    dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic world.
    Gen,
    /// Build the semantic label space from the world's label texts.
    Space,
    /// Train and freeze one teacher per facet.
    Teach,
    /// Train a student under one loss mode.
    Train {
        /// Loss mode; defaults to `train.mode`.
        #[arg(long)]
        mode: Option<String>,
    },
    /// Sequential per-facet fine-tuning against joint training.
    FinetuneSeq {
        #[arg(long, default_value = "classification-merged")]
        mode: String,
    },
    /// Linear probes on a checkpoint's pooled features.
    Probe {
        #[arg(long)]
        model: PathBuf,
    },
    /// Nearest-label classification with a checkpoint's heads.
    Zeroshot {
        #[arg(long)]
        model: PathBuf,
    },
    /// Merge and re-emit report CSVs.
    Report {
        #[arg(long, required = true)]
        input: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Finite-difference check of every loss gradient.
    Gradcheck {
        #[arg(long, default_value_t = 10)]
        seeds: u64,
    },
    /// Gradient, contrastive-loss, attention and PCA checks.
    Selftest,
    /// Every loss mode plus single-facet baselines, probed on every facet.
    Table1,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = RunConfig::default();
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path)
            .map_err(|e| MufiError::Config(format!("cannot read config {}: {e}", path.display())))?;
        config.apply_text(&text, Source::File)?;
    }
    if let Some(seed) = cli.seed {
        config.set("seed", &seed.to_string(), Source::Flag)?;
    }
    config.apply_overrides(&cli.set)?;
    config.experiment.train.threads = cli.threads;
    config.validate()?;
    Ok(config)
}

fn run(cli: &Cli) -> Result<Status> {
    let config = load_config(cli)?;
    eprintln!("configuration (flag > file > default):");
    eprint!("{}", config.describe());
    let ctx = Ctx {
        config,
        dir: cli.dir.clone(),
        json: cli.json,
    };
    match &cli.command {
        Command::Gen => commands::gen(&ctx),
        Command::Space => commands::space(&ctx),
        Command::Teach => commands::teach(&ctx),
        Command::Train { mode } => commands::train(&ctx, mode.as_deref()),
        Command::FinetuneSeq { mode } => commands::finetune_seq(&ctx, mode),
        Command::Probe { model } => commands::probe(&ctx, model),
        Command::Zeroshot { model } => commands::zeroshot(&ctx, model),
        Command::Report { input, out, svg } => commands::report(&ctx, input, out.as_deref(), svg.as_deref()),
        Command::Gradcheck { seeds } => commands::gradcheck(&ctx, *seeds),
        Command::Selftest => commands::self_test(&ctx),
        Command::Table1 => commands::table1_preset(&ctx),
    }
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numeric => 4,
        ErrorKind::Other => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::ChecksFailed) => {
            eprintln!("error: numerical checks failed");
            ExitCode::from(exit_code(ErrorKind::Numeric))
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
