use std::process::ExitCode;

/// Failure of a CLI invocation, split by exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad configuration, arguments or input files (exit 2).
    #[error("{0}")]
    Validation(String),
    /// The algorithm itself failed (exit 3).
    #[error("{0}")]
    Algorithm(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Validation(_) => ExitCode::from(2),
            CliError::Algorithm(_) => ExitCode::from(3),
        }
    }
}

impl From<pomp_kit::Error> for CliError {
    fn from(e: pomp_kit::Error) -> Self {
        use pomp_kit::Error as E;
        match e {
            E::MissingComponent(_) | E::UnknownName(_) | E::DuplicateName(_) | E::Invalid { .. } => {
                CliError::Validation(e.to_string())
            }
            _ => CliError::Algorithm(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Algorithm(format!("i/o: {e}"))
    }
}
