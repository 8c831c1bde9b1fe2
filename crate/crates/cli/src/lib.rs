//! Reproducible experiment driver: JSON config in, CSV tables plus a
//! checksummed manifest out.

pub mod config;
pub mod run;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("checks failed: {0}")]
    ChecksFailed(String),
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("solver failure: {0}")]
    SolverFailure(String),
    #[error("replay mismatch: {0}")]
    ReproMismatch(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ChecksFailed(_) => 1,
            CliError::ConfigInvalid(_) => 2,
            CliError::SolverFailure(_) | CliError::Io(_) => 3,
            CliError::ReproMismatch(_) => 4,
        }
    }
}

impl From<monodiff::solver::SolverError> for CliError {
    fn from(e: monodiff::solver::SolverError) -> Self {
        use monodiff::solver::SolverError;
        match e {
            SolverError::InvalidConfig(m) => CliError::ConfigInvalid(m),
            other => CliError::SolverFailure(other.to_string()),
        }
    }
}

impl From<monodiff::verifier::VerifierError> for CliError {
    fn from(e: monodiff::verifier::VerifierError) -> Self {
        use monodiff::verifier::VerifierError;
        match e {
            VerifierError::Solver(s) => s.into(),
            VerifierError::InvalidInput(m) => CliError::ConfigInvalid(m),
            other => CliError::SolverFailure(other.to_string()),
        }
    }
}

impl From<monodiff::NoiseError> for CliError {
    fn from(e: monodiff::NoiseError) -> Self {
        CliError::SolverFailure(e.to_string())
    }
}

impl From<monodiff::OperatorError> for CliError {
    fn from(e: monodiff::OperatorError) -> Self {
        CliError::SolverFailure(e.to_string())
    }
}
