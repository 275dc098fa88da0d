use zero_avsr::bridge::BridgeError;
use zero_avsr::config::ConfigError;
use zero_avsr::corpus::CorpusError;
use zero_avsr::eval::EvalError;
use zero_avsr::nn::CheckpointError;
use zero_avsr::romanizer::RomanizerError;
use zero_avsr::trainer::TrainError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("backend unavailable: {0}")]
    Backend(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Other(_) => 1,
            CliError::Config(_) => 2,
            CliError::Diverged(_) => 3,
            CliError::Backend(_) => 4,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::InvalidSpec(_) | CorpusError::InfeasibleMapping(_) => CliError::Config(e.to_string()),
            _ => CliError::Other(e.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Other(e.to_string())
    }
}

impl From<RomanizerError> for CliError {
    fn from(e: RomanizerError) -> Self {
        match e {
            RomanizerError::DivergedLoss { .. } => CliError::Diverged(e.to_string()),
            RomanizerError::InvalidConfig(_) | RomanizerError::EmptyTrainingSet => CliError::Config(e.to_string()),
            _ => CliError::Other(e.to_string()),
        }
    }
}

impl From<BridgeError> for CliError {
    fn from(e: BridgeError) -> Self {
        match e {
            BridgeError::DivergedLoss { .. } => CliError::Diverged(e.to_string()),
            BridgeError::BackendUnavailable(_) | BridgeError::BackendTimeout(_) => CliError::Backend(e.to_string()),
            BridgeError::InvalidConfig(_) | BridgeError::MissingLanguage(_) | BridgeError::UnknownLanguage(_) => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Other(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::DivergedLoss { .. } => CliError::Diverged(e.to_string()),
            TrainError::SeenLanguageViolation { .. } | TrainError::MissingLanguage(_) | TrainError::InvalidConfig(_) => {
                CliError::Config(e.to_string())
            }
            TrainError::Bridge(b) => b.into(),
            TrainError::Romanizer(r) => r.into(),
            _ => CliError::Other(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::InvalidConfig(_) => CliError::Config(e.to_string()),
            EvalError::Bridge(b) => b.into(),
            EvalError::Train(t) => t.into(),
            EvalError::Romanizer(r) => r.into(),
            _ => CliError::Other(e.to_string()),
        }
    }
}
