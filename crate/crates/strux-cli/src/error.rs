use std::fmt;

/// Failure of a command, split by exit status.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or input data; exit status 2.
    Validation(String),
    /// The estimation or simulation itself failed; exit status 1.
    Estimation(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Estimation(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "validation error: {m}"),
            CliError::Estimation(m) => write!(f, "estimation error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub fn validation<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Validation(msg.into()))
}

/// Tag library errors with the stage they came from.
pub trait Stage<T> {
    fn validating(self, what: &str) -> CliResult<T>;
    fn estimating(self, what: &str) -> CliResult<T>;
}

impl<T, E: fmt::Display> Stage<T> for std::result::Result<T, E> {
    fn validating(self, what: &str) -> CliResult<T> {
        self.map_err(|e| CliError::Validation(format!("{what}: {e}")))
    }

    fn estimating(self, what: &str) -> CliResult<T> {
        self.map_err(|e| CliError::Estimation(format!("{what}: {e}")))
    }
}
