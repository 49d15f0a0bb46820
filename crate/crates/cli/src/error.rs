use lanefollow::config::ConfigError;
use lanefollow::env::EnvError;
use lanefollow::eval::EvalError;
use lanefollow::policy::PolicyError;
use lanefollow::ppo::PpoError;
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<EnvError> for CliError {
    fn from(e: EnvError) -> Self {
        match e {
            EnvError::MapFile { .. } => CliError::Io(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<PolicyError> for CliError {
    fn from(e: PolicyError) -> Self {
        match e {
            PolicyError::NonFinite(_) => CliError::Numerical(e.to_string()),
            PolicyError::Io(_) | PolicyError::Checkpoint(_) => CliError::Io(e.to_string()),
            PolicyError::Shape(_) | PolicyError::Spec(_) => CliError::Config(e.to_string()),
        }
    }
}

impl From<PpoError> for CliError {
    fn from(e: PpoError) -> Self {
        match e {
            PpoError::Env(e) => e.into(),
            PpoError::Policy(e) => e.into(),
            PpoError::Io(e) => e.into(),
            PpoError::NonFinite { .. } | PpoError::LengthMismatch(_) => CliError::Numerical(e.to_string()),
            PpoError::Config(_) => CliError::Config(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Env(e) => e.into(),
            EvalError::Policy(e) => e.into(),
            EvalError::Io(e) => e.into(),
            EvalError::ActionMismatch { .. } => CliError::Config(e.to_string()),
            EvalError::Format(_) => CliError::Io(e.to_string()),
        }
    }
}
