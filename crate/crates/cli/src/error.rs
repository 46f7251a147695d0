use std::fmt;

/// Failure of a subcommand, carrying its exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, configuration or input selection (exit 2).
    Usage(String),
    /// Failure while reading, processing or writing data (exit 1).
    Processing(anyhow::Error),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Processing(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Processing(err) => write!(f, "{err:#}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(err: anyhow::Error) -> Self {
        CliError::Processing(err)
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::Processing(err.into())
    }
}

/// Configuration errors from the library are the caller's to fix.
impl From<fanchirp_core::Error> for CliError {
    fn from(err: fanchirp_core::Error) -> Self {
        match err {
            fanchirp_core::Error::Config(msg) => CliError::Usage(msg),
            other => CliError::Processing(other.into()),
        }
    }
}

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}
