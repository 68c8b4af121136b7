use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io { path: PathBuf, source: std::io::Error },
    Core(kme_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) => ExitCode::from(2),
            CliError::Io { .. } => ExitCode::from(3),
            CliError::Core(e) => match e {
                kme_core::Error::NumericalFailure(_) | kme_core::Error::Divergence { .. } => ExitCode::from(1),
                _ => ExitCode::from(2),
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "usage error: {msg}"),
            CliError::Io { path, source } => write!(f, "i/o error at {}: {source}", path.display()),
            CliError::Core(e) => write!(f, "error: {e}"),
        }
    }
}

impl From<kme_core::Error> for CliError {
    fn from(e: kme_core::Error) -> Self {
        CliError::Core(e)
    }
}
