use std::io;
use std::path::Path;

use shrinklearn_core::Error as CoreError;

/// Failure of a command, grouped by process exit code.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    /// Malformed command line; the message is clap's rendered report.
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Io(String),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Usage(_) | AppError::Validation(_) => 2,
            AppError::Numerical(_) => 3,
            AppError::Io(_) => 4,
        }
    }

    pub fn io(path: &Path, err: io::Error) -> Self {
        AppError::Io(format!("{}: {err}", path.display()))
    }

    pub fn format(path: &Path, msg: impl std::fmt::Display) -> Self {
        AppError::Io(format!("{}: {msg}", path.display()))
    }
}

impl From<CoreError> for AppError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e.root() {
            CoreError::DimensionMismatch { .. }
            | CoreError::InvalidParameter(_)
            | CoreError::Empty(_) => AppError::Validation(msg),
            CoreError::Diverged { last_finite, .. } => {
                let peak = last_finite.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                AppError::Numerical(format!(
                    "{msg} (last finite coefficients: {} values, max |c| = {peak:e})",
                    last_finite.len()
                ))
            }
            _ => AppError::Numerical(msg),
        }
    }
}

pub type Result<T> = std::result::Result<T, AppError>;
