use std::fmt;

use capnet::CapacityError;

/// Exit code 1 for numerical rejections, 2 for usage and spec problems.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Spec(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Numerical(_) => 1,
            CliError::Usage(_) | CliError::Spec(_) => 2,
        }
    }

    /// Wraps a core error with a location such as `"layer 3"`.
    pub fn at(context: impl fmt::Display, err: CapacityError) -> Self {
        let msg = format!("{context}: {err}");
        if err.is_numerical() {
            CliError::Numerical(msg)
        } else {
            CliError::Spec(msg)
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Spec(m) => write!(f, "spec error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical error: {m}"),
        }
    }
}

impl From<CapacityError> for CliError {
    fn from(err: CapacityError) -> Self {
        if err.is_numerical() {
            CliError::Numerical(err.to_string())
        } else {
            CliError::Spec(err.to_string())
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
