use std::fmt;

/// Failure classes with their process exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or arguments (exit 2).
    Validation(String),
    /// Non-finite state during simulation or training (exit 3).
    Divergence(String),
    /// File system or file-format failure (exit 4).
    Io(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    pub fn io(context: impl fmt::Display, err: impl fmt::Display) -> Self {
        CliError::Io(format!("{context}: {err}"))
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Divergence(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "validation error: {m}"),
            CliError::Divergence(m) => write!(f, "numerical divergence: {m}"),
            CliError::Io(m) => write!(f, "I/O error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<neural_oscillator::Error> for CliError {
    fn from(e: neural_oscillator::Error) -> Self {
        use neural_oscillator::Error as E;
        match e {
            E::Dimension { .. } | E::Invalid(_) => CliError::Validation(e.to_string()),
            E::NonFinite { .. } | E::Divergence { .. } | E::TrainingDivergence { .. } | E::NoConvergence { .. } => {
                CliError::Divergence(e.to_string())
            }
            E::Format(_) | E::Io(_) | E::Json(_) => CliError::Io(e.to_string()),
        }
    }
}
