use thiserror::Error;

use crate::solver::SolveReport;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerically singular system: {0}")]
    NumericallySingular(String),

    #[error("nonlinear iteration diverged after {} iterations", .report.iterations)]
    Diverged { report: Box<SolveReport> },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
