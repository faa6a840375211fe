//! `feh-forge`: batch front end of the metallicity pipeline.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Run;
use crate::config::{Overrides, RunConfig, OUTPUT_ENV};
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "feh-forge", version, about = "Photometric metallicities of RRab stars from G-band light curves")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Apply quality cuts and the train/validation split.
    Ingest(Args),
    /// Build the dataset containers for the configured variants.
    Preprocess(Args),
    /// Train on the fixed split and save snapshots.
    Train(Args),
    /// Repeated stratified k-fold cross-validation.
    Cv(Args),
    /// Cross-validate every cell of the hyperparameter grid.
    Gridsearch(Args),
    /// Predict with a saved snapshot.
    Predict(Args),
}

#[derive(clap::Args)]
struct Args {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

fn run(name: &'static str, args: Args) -> Result<(), CliError> {
    let env_output = std::env::var_os(OUTPUT_ENV).map(PathBuf::from);
    let cfg = RunConfig::resolve(args.config.as_deref(), &args.overrides, env_output)?;
    feh_core::cv::with_threads(cfg.train.threads, move || {
        let mut run = Run::new(cfg);
        match name {
            "ingest" => run.cmd_ingest(),
            "preprocess" => run.cmd_preprocess(),
            "train" => run.cmd_train(),
            "cv" => run.cmd_cv(),
            "gridsearch" => run.cmd_gridsearch(),
            _ => run.cmd_predict(),
        }?;
        run.finish(name)
    })?
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let (name, args) = match cli.command {
        Command::Ingest(a) => ("ingest", a),
        Command::Preprocess(a) => ("preprocess", a),
        Command::Train(a) => ("train", a),
        Command::Cv(a) => ("cv", a),
        Command::Gridsearch(a) => ("gridsearch", a),
        Command::Predict(a) => ("predict", a),
    };
    match run(name, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("feh-forge {name}: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
