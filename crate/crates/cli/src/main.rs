use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod error;

use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "zeroavsr", about = "Zero-shot audio-visual speech recognition on synthetic languages")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (TOML). Omitted tables take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory; created if missing.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Dotted-key override, e.g. `bridge_training.mix_ratio=0.3`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Generate the synthetic multilingual corpus.
    GenCorpus,
    /// Train the CTC romanizer on the seen languages' speech.
    TrainRomanizer,
    /// Pretrain the toy character LM on text of every language.
    PretrainLm,
    /// Train LoRA, compressor and adapter on Task 1 and Task 2.
    TrainBridge,
    /// Run the evaluation selected by `eval.mode`.
    Eval,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let run = commands::Run {
        command: cli.command,
        config: cli.config,
        seed: cli.seed,
        out: cli.out,
        overrides: cli.overrides,
        exec: if cli.sequential {
            zero_avsr::Execution::Sequential
        } else {
            zero_avsr::Execution::Parallel
        },
    };
    match commands::execute(&run) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
