use std::io;
use std::path::PathBuf;

use argmine_core::numerics::TensorCheck;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("missing file: {}", .0.display())]
    MissingPath(PathBuf),

    #[error("{0}")]
    BadInput(String),

    #[error("{0}")]
    Incompatible(String),

    #[error("gradient check failed for: {}", describe_failures(.0))]
    GradCheck(Vec<TensorCheck>),

    #[error(transparent)]
    Core(#[from] argmine_core::Error),
}

fn describe_failures(failures: &[TensorCheck]) -> String {
    failures
        .iter()
        .map(|t| format!("{} (rel. error {:.3e})", t.name, t.max_rel_error))
        .collect::<Vec<_>>()
        .join(", ")
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 0 ok, 1 internal, 2 bad input, 3 incompatible artifacts.
    pub fn exit_code(&self) -> u8 {
        use argmine_core::Error as E;
        match self {
            CliError::Io { .. } | CliError::GradCheck(_) => 1,
            CliError::Parse { .. } | CliError::MissingPath(_) | CliError::BadInput(_) => 2,
            CliError::Incompatible(_) => 3,
            CliError::Core(e) => match e {
                E::Validation { .. } | E::UnknownLabel { .. } | E::Config(_) | E::InvalidArgument(_) => 2,
                E::Schema(_) | E::DimensionMismatch { .. } | E::MissingDocument(_) => 3,
                _ => 1,
            },
        }
    }

    /// Rewraps errors caused by data that does not fit a trained model.
    pub(crate) fn against_checkpoint(self) -> Self {
        use argmine_core::Error as E;
        match self {
            CliError::Core(e @ (E::UnknownLabel { .. } | E::Schema(_))) => {
                CliError::Incompatible(format!("schema mismatch: {e}"))
            }
            CliError::Core(e @ (E::DimensionMismatch { .. } | E::MissingDocument(_))) => {
                CliError::Incompatible(format!("incompatible with checkpoint: {e}"))
            }
            other => other,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
