//! Command-line orchestration of simulation, estimation, fitting and
//! forecasting, plus the self-test suite.

pub mod commands;
pub mod config;
pub mod experiments;
pub mod selftest;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Compute(#[from] drbeta::Error),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    /// 2 for usage and configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        use drbeta::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Compute(E::Params(_) | E::Tuning(_) | E::Json(_)) => 2,
            CliError::Compute(_) | CliError::Failed(_) => 1,
        }
    }
}
