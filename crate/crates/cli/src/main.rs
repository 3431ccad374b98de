//! `paa`: data generation, training, protocol evaluation, noise sweeps,
//! ablations and embedding export.
//!
//! Exit codes: 0 success, 2 usage or config error, 3 data error, 4 numeric
//! failure.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "paa", version, about = "Prototype-driven adversarial alignment")]
struct Cli {
    /// Overrides the seed of the config (training) or generator (gen).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for folds and sweep cells.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct ConfigArgs {
    /// Config file in `key = value` form.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Variant when no config file is given.
    #[arg(long, default_value = "M")]
    variant: String,
    /// Extra `key=value` overrides applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Debug, Clone)]
pub struct CorpusArgs {
    /// Source corpus manifest.
    #[arg(long)]
    source: PathBuf,
    /// Target corpus manifest.
    #[arg(long)]
    target: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic (source, target) corpus pair.
    Gen(commands::GenArgs),
    /// Train one model and write a report and checkpoint.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        corpora: CorpusArgs,
        /// Labeled evaluation corpus (defaults to the target).
        #[arg(long)]
        eval: Option<PathBuf>,
        /// Continue from a checkpoint taken on the same corpora.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this many completed epochs (checkpoint for resuming).
        #[arg(long)]
        until: Option<usize>,
    },
    /// Train and evaluate per fold of an evaluation protocol.
    Protocol {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        corpora: CorpusArgs,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
        protocol: u8,
    },
    /// Sweep source label-noise ratios for the RaL and SSL losses.
    Noise {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        corpora: CorpusArgs,
    },
    /// Run ablation switches against a base config.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        corpora: CorpusArgs,
        /// Switch to run; repeatable. Defaults to every applicable switch.
        #[arg(long = "switch")]
        switches: Vec<String>,
    },
    /// Export embeddings and predictions of a checkpoint.
    Embed {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        corpora: CorpusArgs,
    },
    /// Differential-entropy features of a raw single-channel signal.
    De(commands::DeArgs),
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("PAA_LOG_LEVEL", "error");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let global = commands::Global {
        seed: cli.seed,
        threads: cli.threads,
        out: cli.out,
    };
    match cli.command {
        Command::Gen(args) => commands::gen(&global, &args),
        Command::Train {
            config,
            corpora,
            eval,
            resume,
            until,
        } => commands::train(&global, &config, &corpora, eval.as_deref(), resume.as_deref(), until),
        Command::Protocol {
            config,
            corpora,
            protocol,
        } => commands::protocol(&global, &config, &corpora, protocol),
        Command::Noise { config, corpora } => commands::noise(&global, &config, &corpora),
        Command::Ablate {
            config,
            corpora,
            switches,
        } => commands::ablate(&global, &config, &corpora, &switches),
        Command::Embed { checkpoint, corpora } => commands::embed(&global, &checkpoint, &corpora),
        Command::De(args) => commands::de(&global, &args),
    }
}

fn main() -> ExitCode {
    init_logging();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("paa: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
