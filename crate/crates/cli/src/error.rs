use std::path::PathBuf;

use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] floeformer::Error),

    #[error("{0}")]
    Usage(String),

    #[error("{path}: {detail}")]
    Data { path: PathBuf, detail: String },
}

impl CliError {
    pub fn data(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        CliError::Data { path: path.into(), detail: detail.into() }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Core(floeformer::Error::Config(_)) => EXIT_USAGE,
            CliError::Core(e) if e.is_numeric() => EXIT_NUMERIC,
            _ => EXIT_DATA,
        }
    }

    fn hint(&self) -> Option<&'static str> {
        use floeformer::Error as E;
        match self {
            CliError::Core(E::MethodMismatch(_)) => {
                Some("bbb needs a checkpoint from `train --mode bayesian`; mc-dropout works with any checkpoint and --dropout-p")
            }
            CliError::Core(E::NumericAbort { .. }) => Some("try a smaller --lr or check the input chips"),
            CliError::Core(E::Io { .. }) => Some("check that the path exists and is writable"),
            CliError::Core(E::BadMagic { .. } | E::Truncated { .. } | E::FormatDimension { .. } | E::Malformed { .. }) => {
                Some("regenerate the file with the matching subcommand")
            }
            _ => None,
        }
    }

    /// Prints a one-line message (plus a hint) to stderr and returns the exit code.
    pub fn report(&self) -> i32 {
        match self.hint() {
            Some(h) => eprintln!("error: {self} ({h})"),
            None => eprintln!("error: {self}"),
        }
        self.exit_code()
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
