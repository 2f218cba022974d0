use std::fmt;

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_SOLVER: u8 = 4;

/// An error carrying the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl fmt::Display) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: message.to_string(),
        }
    }

    /// Errors raised while reading inputs are always data errors, whatever
    /// their library kind.
    pub fn data(message: impl fmt::Display) -> Self {
        CliError {
            code: EXIT_DATA,
            message: message.to_string(),
        }
    }

    pub fn solver(message: impl fmt::Display) -> Self {
        CliError {
            code: EXIT_SOLVER,
            message: message.to_string(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<nbra::Error> for CliError {
    fn from(e: nbra::Error) -> Self {
        use nbra::Error::*;
        let code = match e {
            Config(_) | Validation(_) | RankDeficient { .. } => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast::<nbra::Error>() {
            Ok(inner) => inner.into(),
            Err(e) => CliError::data(format!("{e:#}")),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
