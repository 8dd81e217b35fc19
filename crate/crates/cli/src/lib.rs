//! Scenario runner and verification suite for the herding simulator.

use std::path::PathBuf;

use herding_core::model::ConfigError;
use herding_core::sim::RunFailure;
use thiserror::Error;

pub mod output;
pub mod run;
pub mod verify;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(#[from] ConfigError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Sim(Box<RunFailure>),
}
