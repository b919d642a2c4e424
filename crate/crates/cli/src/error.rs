use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{file}, line {line}: {msg}")]
    Config { file: String, line: usize, msg: String },

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Lib(#[from] degenpar::Error),
}

impl CliError {
    /// 2 for usage, configuration and input errors, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        use degenpar::Error as E;
        match self {
            CliError::Lib(E::NonConvergence { .. } | E::Eigen(_) | E::Divergence { .. } | E::NonFinite(_) | E::DegenerateFit(_)) => 3,
            _ => 2,
        }
    }
}
