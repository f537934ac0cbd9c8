use thiserror::Error;

use crate::lkf::LkfError;
use crate::sim::config::ConfigError;
use crate::sim::SimError;
use crate::velest::VelocityEstimationError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Top-level error for library consumers that do not care which stage failed.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Filter(#[from] LkfError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error(transparent)]
    VelocityEstimation(#[from] VelocityEstimationError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed log: {0}")]
    Log(String),
}
