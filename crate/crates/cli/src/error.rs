//! Error classification for exit codes: 0 success, 2 configuration,
//! 3 data, 4 transport.

use std::fmt;

use ped_core::corpus::CorpusError;
use ped_core::encoder::EncoderError;
use ped_core::metrics::MetricsError;
use ped_core::replicate::ReplicateError;
use ped_core::tasks::TaskError;
use ped_core::trainer::TrainError;
use ped_core::viz::VizError;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Transport(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Transport(m) => write!(f, "transport error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Transport(_) => 4,
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::BadConfig(_)
            | TrainError::MissingTagVocab
            | TrainError::Incompatible { .. } => CliError::Config(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<EncoderError> for CliError {
    fn from(e: EncoderError) -> Self {
        match e {
            EncoderError::UnknownBackend(_)
            | EncoderError::BadVocabSpec(_)
            | EncoderError::HiddenDimOutOfRange(_)
            | EncoderError::BadMaxLen(_) => CliError::Config(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<TaskError> for CliError {
    fn from(e: TaskError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ReplicateError> for CliError {
    fn from(e: ReplicateError) -> Self {
        match e {
            ReplicateError::Transport { .. } => CliError::Transport(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<VizError> for CliError {
    fn from(e: VizError) -> Self {
        match e {
            VizError::UnknownMethod(_) | VizError::NoHiddenStates(_) => {
                CliError::Config(e.to_string())
            }
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
