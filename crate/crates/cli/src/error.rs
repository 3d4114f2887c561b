use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure in {op}: {source}")]
    Numerical {
        op: &'static str,
        source: flashpoint::Error,
    },
    #[error("insufficient sample: {0}")]
    Insufficient(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical { .. } => 3,
            CliError::Insufficient(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// Attaches the operation name to core errors; sample-size refusals keep their own code.
pub trait Context<T> {
    fn during(self, op: &'static str) -> Result<T, CliError>;
    /// Errors raised while turning config values into objects.
    fn building(self, what: &str) -> Result<T, CliError>;
}

impl<T> Context<T> for flashpoint::Result<T> {
    fn during(self, op: &'static str) -> Result<T, CliError> {
        self.map_err(|e| match e {
            flashpoint::Error::InsufficientSample { .. } => {
                CliError::Insufficient(format!("{op}: {e}"))
            }
            source => CliError::Numerical { op, source },
        })
    }

    fn building(self, what: &str) -> Result<T, CliError> {
        self.map_err(|e| CliError::Config(format!("{what}: {e}")))
    }
}
