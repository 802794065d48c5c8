//! `mwae`: dataset generation, autoencoder training, bottleneck
//! clustering, and anomaly evaluation for multispectral leaf images.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.
//! `MWAE_THREADS` caps the worker-thread pool.

mod commands;
mod config;
mod io;

use clap::{Parser, Subcommand};

use mwae_core::Error;

#[derive(Parser)]
#[command(name = "mwae", version, about = "Unsupervised powdery-mildew detection on multispectral leaf images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multispectral leaf dataset bundle.
    GenData(commands::gen_data::Args),
    /// Train an autoencoder on a dataset.
    Train(commands::train::Args),
    /// Cluster bottleneck features of a trained model.
    Cluster(commands::cluster::Args),
    /// Compare trained models by ROC/AUC on both anomaly scores.
    Evaluate(commands::evaluate::Args),
    /// Score every sample of a dataset with one model.
    Score(commands::score::Args),
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Parameter(_) => 1,
        Error::Numeric(_) => 3,
        _ => 2,
    }
}

fn init_threads() {
    if let Ok(value) = std::env::var("MWAE_THREADS") {
        if let Ok(n) = value.parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    init_threads();
    let result = match cli.command {
        Command::GenData(args) => commands::gen_data::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Cluster(args) => commands::cluster::run(args),
        Command::Evaluate(args) => commands::evaluate::run(args),
        Command::Score(args) => commands::score::run(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err}");
        std::process::exit(exit_code(&err));
    }
}
