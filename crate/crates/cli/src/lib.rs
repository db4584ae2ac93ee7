//! Presets, run orchestration and artifacts for the microstructure optimiser.

pub mod benchmark;
pub mod config;
pub mod output;
pub mod run;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}: {1}")]
    Io(String, std::io::Error),
    #[error("{0}: {1}")]
    Csv(String, csv::Error),
    #[error(transparent)]
    Core(#[from] microtop_core::Error),
}
