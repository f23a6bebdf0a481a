use std::fmt;

use shel_core::error::ShelError;

/// Failure of a subcommand, carrying the process exit code.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    /// Wraps a library error raised while running `stage`.
    pub fn at(stage: &str) -> impl Fn(ShelError) -> CliError + '_ {
        move |e| {
            let msg = format!("{stage}: {e}");
            if e.is_config_error() {
                CliError::Config(msg)
            } else if e.is_data_error() {
                CliError::Data(msg)
            } else {
                CliError::Numerical(msg)
            }
        }
    }

    pub fn output(path: &std::path::Path, e: impl fmt::Display) -> CliError {
        CliError::Config(format!("cannot write {}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure in {m}"),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
