//! Command-line front end. Metrics go to `--out` as JSON, logs to stderr.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nestner::corpus::load_jsonl;
use nestner::harness::{self, RunConfig, Variant};
use nestner::Result;

#[derive(Parser)]
#[command(name = "nestner", version, about = "Nested NER by entity-triplet generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Ablation {
    Gpa,
    Eorl,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic train/dev/test splits.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Generator metadata as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Boundary-distance histogram and Gaussian fit for a dataset.
    Stats {
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated type names in id order.
        #[arg(long, value_delimiter = ',')]
        types: Option<Vec<String>>,
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Supervised training, then the RL phase unless ablated.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        ablate: Option<Ablation>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Reject the checkpoint if its dimensions differ from this config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write predicted entities for every sentence.
    Decode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare the full method against both ablations over several seeds.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { config: c, seed, out } => {
            let meta = harness::cmd_gen_data(&config(c.as_deref(), seed)?)?;
            if let Some(out) = out {
                harness::write_json(out, &meta)?;
            }
        }
        Command::Stats { data, types, csv, out } => {
            let vocab = harness::resolve_types(&data, types.as_deref())?;
            let ds = load_jsonl(&data, &vocab)?;
            let (table, report) = harness::cmd_stats(&ds)?;
            harness::write_text(csv, &table)?;
            harness::write_json(out, &report)?;
        }
        Command::Train { config: c, ablate, seed, out } => {
            let variant = match ablate {
                None => Variant::Full,
                Some(Ablation::Gpa) => Variant::NoGpa,
                Some(Ablation::Eorl) => Variant::NoEorl,
            };
            let report = harness::cmd_train(&config(c.as_deref(), seed)?, variant)?;
            harness::write_json(out, &report)?;
        }
        Command::Eval { checkpoint, data, config: c, out } => {
            let expected = c.as_deref().map(RunConfig::load).transpose()?;
            let metrics = harness::cmd_eval(&checkpoint, &data, expected.as_ref())?;
            harness::write_json(out, &metrics)?;
        }
        Command::Decode { checkpoint, data, out } => {
            harness::write_json(out, &harness::cmd_decode(&checkpoint, &data)?)?;
        }
        Command::Ablate { config: c, out } => {
            harness::write_json(out, &harness::cmd_ablate(&config(c.as_deref(), None)?)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
