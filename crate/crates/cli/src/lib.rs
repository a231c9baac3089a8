//! Experiment harness: strict TOML configuration, seeded execution of the
//! library's experiments, snapshot file I/O, and CSV/JSON artifact
//! emission with a manifest per run.

pub mod config;
pub mod report;
pub mod runners;
pub mod snapshot;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("snapshot corruption: {0}")]
    Corruption(String),
}

impl CliError {
    /// Process exit code: 2 config, 3 i/o, 4 numerical, 5 corruption.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Corruption(_) => 5,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<adamlab_core::dip::DipError> for CliError {
    fn from(e: adamlab_core::dip::DipError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<adamlab_core::optimizer::AdamError> for CliError {
    fn from(e: adamlab_core::optimizer::AdamError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<adamlab_core::gradient::ModelError> for CliError {
    fn from(e: adamlab_core::gradient::ModelError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<adamlab_core::rmt::RmtError> for CliError {
    fn from(e: adamlab_core::rmt::RmtError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<adamlab_core::divergence::DivergenceError> for CliError {
    fn from(e: adamlab_core::divergence::DivergenceError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<adamlab_core::spike::SpikeError> for CliError {
    fn from(e: adamlab_core::spike::SpikeError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<adamlab_core::monitor::MonitorError> for CliError {
    fn from(e: adamlab_core::monitor::MonitorError) -> Self {
        CliError::Numerical(e.to_string())
    }
}
