mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mmsg_core::train::SplitKind;

#[derive(Parser, Debug)]
#[command(name = "mmsg", version, about = "Molecular property prediction from SMILES and molecular graphs")]
struct Cli {
    /// Log level: error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "info")]
    log_level: log::LevelFilter,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the token dictionary of a dataset, one token per line.
    BuildVocab {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write train/val/test index lists as JSON.
    Split {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "random")]
        kind: SplitKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one model per seed and write checkpoints plus a metrics report.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Dictionary file from build-vocab; built from the data when omitted.
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Worker threads; overrides MMSG_THREADS.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Print the metric of a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Split file from `split` or `train`; the whole file is scored when omitted.
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long, default_value = "test", requires = "split")]
        subset: Subset,
    },
    /// Per-task predictions as CSV.
    Predict(InferArgs),
    /// Fused molecule vectors as CSV.
    Embed(InferArgs),
    /// Finite-difference check of every model gradient.
    Gradcheck {
        #[arg(long, default_value = "CCO")]
        smiles: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        /// Coordinates probed per task type; 0 checks every coordinate.
        #[arg(long, default_value_t = 0)]
        max_entries: usize,
    },
}

#[derive(Args, Debug)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// One SMILES per line, or a CSV with a smiles column; stdin when omitted.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Subset {
    Train,
    Val,
    Test,
}

/// Failure classes with their process exit codes.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Check(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Check(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Check(m) => m,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    env_logger::Builder::new()
        .filter_level(cli.log_level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();

    let result = match cli.command {
        Command::BuildVocab { data, out } => commands::build_vocab(&data, &out),
        Command::Split { data, kind, seed, out } => commands::split(&data, kind, seed, out.as_deref()),
        Command::Train { config, vocab, threads } => commands::train(&config, vocab.as_deref(), threads),
        Command::Eval { checkpoint, data, split, subset } => {
            let subset = split.as_ref().map(|_| match subset {
                Subset::Train => "train",
                Subset::Val => "val",
                Subset::Test => "test",
            });
            commands::eval(&checkpoint, &data, split.as_deref(), subset)
        }
        Command::Predict(a) => commands::predict(&a.checkpoint, a.input.as_deref(), a.out.as_deref(), false),
        Command::Embed(a) => commands::predict(&a.checkpoint, a.input.as_deref(), a.out.as_deref(), true),
        Command::Gradcheck { smiles, seed, tolerance, step, max_entries } => {
            commands::gradcheck(&smiles, seed, tolerance, step, max_entries)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
