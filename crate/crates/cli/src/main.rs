//! `relx`: command-line driver for the relation-extraction pipeline.
//!
//! ```text
//! relx <stats|preprocess|train|predict|postprocess|eval|ablate|pipeline>
//!      [--config FILE] [--section.key VALUE]...
//! relx schema
//! relx fixture --dir DIR [--per-class N] [--seed N]
//! ```
//!
//! Exit status: 0 on success, 1 for invalid input or configuration, 2 for
//! I/O and remote-protocol failures.

mod commands;
mod config;
mod error;

use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::Context;
use config::{RunConfig, Settings};
use error::CliError;

#[derive(Parser)]
#[command(
    name = "relx",
    version,
    about = "Typed relation extraction with constrained decoding"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-relation and per-pair counts of every configured corpus
    Stats(RunArgs),
    /// Insert entity markers: <split>.marked.tsv
    Preprocess(RunArgs),
    /// Fit the native model (model.rlxb) or write the remote fine-tuning input
    Train(RunArgs),
    /// Label distributions for the eval split: <split>.dists.tsv
    Predict(RunArgs),
    /// Constrained decoding: <split>.predictions.tsv
    Postprocess(RunArgs),
    /// Score predictions: <split>.report.txt
    Eval(RunArgs),
    /// Compare marker strategies: ablation.txt
    Ablate(RunArgs),
    /// preprocess, train, predict, postprocess and eval in one go
    Pipeline(RunArgs),
    /// Print the label schema as TSV
    Schema,
    /// Write the synthetic separable corpus as train.jsonl and test.jsonl
    Fixture(FixtureArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML config file; flags override it
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(flatten)]
    settings: Settings,
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(long, value_name = "DIR")]
    dir: PathBuf,
    #[arg(long, default_value_t = 25, value_name = "N")]
    per_class: usize,
    #[arg(long, default_value_t = 42, value_name = "N")]
    seed: u64,
}

impl RunArgs {
    fn context(self) -> Result<Context, CliError> {
        let file = match &self.config {
            Some(path) => Settings::from_file(path)?,
            None => Settings::default(),
        };
        let env = Settings::from_env(|k| std::env::var(k).ok())?;
        let cfg = RunConfig::resolve(file.overlay(env).overlay(self.settings))?;
        Ok(Context::new(cfg))
    }
}

fn run(command: Command) -> Result<(), CliError> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match command {
        Command::Stats(a) => commands::stats(&a.context()?, &mut out),
        Command::Preprocess(a) => commands::preprocess(&a.context()?),
        Command::Train(a) => commands::train(&a.context()?),
        Command::Predict(a) => commands::predict(&a.context()?),
        Command::Postprocess(a) => commands::postprocess(&a.context()?),
        Command::Eval(a) => commands::eval(&a.context()?, &mut out),
        Command::Ablate(a) => commands::ablate(&a.context()?, &mut out),
        Command::Pipeline(a) => commands::pipeline(&a.context()?, &mut out),
        Command::Schema => out
            .write_all(relx::build_default_schema().dump().as_bytes())
            .map_err(|e| CliError::Io(e.to_string())),
        Command::Fixture(a) => commands::fixture(&a.dir, a.per_class, a.seed),
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
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            for line in e.to_string().lines() {
                eprintln!("error: {line}");
            }
            ExitCode::from(e.exit_code())
        }
    }
}
