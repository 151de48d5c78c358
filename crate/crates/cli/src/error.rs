use std::fmt;
use std::process::ExitCode;

use qaharvest::analytics::AgreementError;
use qaharvest::cache::CacheError;
use qaharvest::curate::CurateError;
use qaharvest::dataset::DatasetError;
use qaharvest::engines::EngineError;
use qaharvest::harvest::HarvestError;
use qaharvest::llm::LlmError;
use qaharvest::seedgen::SeedError;

/// Failure categories and their exit codes: configuration 2, engine 3,
/// anything else 1.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Engine(String),
    Other(String),
}

impl CliError {
    pub fn config(msg: impl fmt::Display) -> Self {
        CliError::Config(msg.to_string())
    }

    pub fn other(msg: impl fmt::Display) -> Self {
        CliError::Other(msg.to_string())
    }

    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Config(_) => ExitCode::from(2),
            CliError::Engine(_) => ExitCode::from(3),
            CliError::Other(_) => ExitCode::from(1),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Engine(m) => write!(f, "engine error: {m}"),
            CliError::Other(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Config(_) | EngineError::Precondition(_) => CliError::config(e),
            _ => CliError::Engine(e.to_string()),
        }
    }
}

impl From<HarvestError> for CliError {
    fn from(e: HarvestError) -> Self {
        match e {
            HarvestError::Engine {
                source: EngineError::Config(_) | EngineError::Precondition(_),
                ..
            } => CliError::config(e),
            HarvestError::Engine { .. } | HarvestError::IterationFailed { .. } => CliError::Engine(e.to_string()),
            HarvestError::Finished { .. } | HarvestError::Checkpoint(_) => CliError::config(e),
            HarvestError::Io(_) => CliError::other(e),
        }
    }
}

impl From<SeedError> for CliError {
    fn from(e: SeedError) -> Self {
        match e {
            SeedError::Llm(LlmError::Backend { .. }) => CliError::Engine(e.to_string()),
            _ => CliError::config(e),
        }
    }
}

impl From<LlmError> for CliError {
    fn from(e: LlmError) -> Self {
        match e {
            LlmError::Backend { .. } => CliError::Engine(e.to_string()),
            _ => CliError::config(e),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Ratios(_) | DatasetError::Env { .. } | DatasetError::TooManyRejects { .. } => {
                CliError::config(e)
            }
            _ => CliError::other(e),
        }
    }
}

impl From<AgreementError> for CliError {
    fn from(e: AgreementError) -> Self {
        match e {
            AgreementError::Io(_) => CliError::other(e),
            _ => CliError::config(e),
        }
    }
}

impl From<CacheError> for CliError {
    fn from(e: CacheError) -> Self {
        CliError::config(e)
    }
}

impl From<CurateError> for CliError {
    fn from(e: CurateError) -> Self {
        CliError::other(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::other(e)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::other(e)
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::other(e)
    }
}
