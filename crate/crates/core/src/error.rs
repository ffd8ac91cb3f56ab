use thiserror::Error;

use crate::config::ConfigError;
use crate::metrics::MetricsError;
use crate::policy::PolicyError;
use crate::radio::RadioError;
use crate::sim::{DistError, SimError};

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Radio(#[from] RadioError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{0}")]
    Sweep(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Whether the error comes from bad user input rather than a failed run.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Policy(PolicyError::InvalidParameter { .. }) | Error::Sweep(_))
    }
}
