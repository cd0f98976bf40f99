use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad or missing configuration, rejected before any compute.
    #[error("invalid configuration: {0}")]
    Schema(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("i/o failure: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<parahom_core::Error> for CliError {
    fn from(e: parahom_core::Error) -> Self {
        use parahom_core::Error as E;
        match e {
            E::Io(_) | E::Format(_) => CliError::Io(e.to_string()),
            E::NotConverged(_) | E::Compatibility { .. } => CliError::Solver(e.to_string()),
            E::Config(_) | E::Spec(_) | E::Resolution(_) | E::LatticeMismatch(_) => CliError::Schema(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
