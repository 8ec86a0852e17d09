//! The `carle` command-line harness: configuration, data ingestion and the
//! experiment subcommands.

pub mod args;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod output;

pub use args::{Cli, Command};
pub use config::{ExperimentConfig, Source};
pub use error::{CliError, Result};

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Extract(a) => commands::extract(a),
        Command::Train(a) => commands::train(a),
        Command::Predict(a) => commands::predict(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Noise(a) => commands::noise(a),
        Command::Crossdomain(a) => commands::crossdomain(a),
        Command::SnrSweep(a) => commands::snr(a),
    }
}
