use std::fmt;
use std::process::ExitCode;

use houston::eval::EvalError;
use houston::event_stream::StreamError;
use houston::smc::{EngineError, ResultError};
use houston::survival::SurvivalError;
use houston::synth::SynthError;

/// Failure classes, each with its own exit status.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or flag combinations (exit 1).
    Usage(String),
    /// Unreadable, missing or malformed data (exit 2).
    Data(String),
    /// Numerical breakdown during inference or scoring (exit 3).
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        })
    }

    pub fn data(msg: impl fmt::Display) -> Self {
        CliError::Data(msg.to_string())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::data(e)
    }
}

impl From<StreamError> for CliError {
    fn from(e: StreamError) -> Self {
        CliError::data(e)
    }
}

impl From<ResultError> for CliError {
    fn from(e: ResultError) -> Self {
        CliError::data(e)
    }
}

impl From<SurvivalError> for CliError {
    fn from(e: SurvivalError) -> Self {
        match e {
            SurvivalError::Parse { .. } | SurvivalError::Io(_) | SurvivalError::InvalidView(_) => {
                CliError::data(e)
            }
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Config(m) => CliError::Usage(m),
            SynthError::Survival(s) => s.into(),
            other => CliError::data(other),
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Config(m) => CliError::Usage(m),
            EngineError::Degenerate => CliError::Numeric(e.to_string()),
            EngineError::Survival(s) => s.into(),
            other => CliError::data(other),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::AucUndefined => CliError::Numeric(e.to_string()),
            other => CliError::data(other),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::data(e)
    }
}
