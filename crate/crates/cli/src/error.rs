use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },

    #[error("{path}: {source}")]
    Parse { path: String, source: serde_json::Error },

    #[error(transparent)]
    Core(#[from] gjs_core::Error),

    #[error(transparent)]
    Vae(#[from] gjs_vae::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

fn core_code(e: &gjs_core::Error) -> i32 {
    use gjs_core::Error as E;
    match e {
        E::NonFinite(_) | E::NonFiniteIntegrand { .. } | E::QuadratureTolerance { .. } | E::FitDiverged { .. } => {
            EXIT_NUMERICAL
        }
        _ => EXIT_USAGE,
    }
}

impl CliError {
    /// 2 for bad input, 3 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => core_code(e),
            CliError::Vae(gjs_vae::Error::Core(e)) => core_code(e),
            CliError::Vae(gjs_vae::Error::Diverged { .. }) => EXIT_NUMERICAL,
            _ => EXIT_USAGE,
        }
    }
}
