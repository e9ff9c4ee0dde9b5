use std::fmt;

use estp_core::datagen::GenError;
use estp_core::jsonl::JsonlError;
use estp_core::matcher::MatchError;
use estp_core::report::ReportError;
use estp_core::runtime::SimError;
use estp_core::scoring::ScoreError;
use estp_core::supervision::SupervisionError;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_EXTERNAL: i32 = 3;
pub const EXIT_INVARIANT: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_VALIDATION,
            message: message.into(),
        }
    }

    pub fn external(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_EXTERNAL,
            message: message.into(),
        }
    }

    pub fn invariant(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INVARIANT,
            message: message.into(),
        }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        Self::usage(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<JsonlError> for CliError {
    fn from(e: JsonlError) -> Self {
        match e {
            JsonlError::Io(_) => Self::usage(e.to_string()),
            _ => Self::validation(e.to_string()),
        }
    }
}

impl From<MatchError> for CliError {
    fn from(e: MatchError) -> Self {
        match e {
            MatchError::Scorer { .. } => Self::external(e.to_string()),
            MatchError::MissingScorer => Self::invariant(e.to_string()),
            _ => Self::validation(e.to_string()),
        }
    }
}

impl From<ScoreError> for CliError {
    fn from(e: ScoreError) -> Self {
        match e {
            ScoreError::Judge { .. } => Self::external(e.to_string()),
            ScoreError::Config(_) => Self::usage(e.to_string()),
            ScoreError::OutsideInterval { .. } => Self::invariant(e.to_string()),
            _ => Self::validation(e.to_string()),
        }
    }
}

impl From<SupervisionError> for CliError {
    fn from(e: SupervisionError) -> Self {
        match e {
            SupervisionError::Argument(_) => Self::usage(e.to_string()),
            SupervisionError::OutsideInterval { .. } => Self::invariant(e.to_string()),
            _ => Self::validation(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Io(_) => Self::usage(e.to_string()),
            _ => Self::validation(e.to_string()),
        }
    }
}

impl From<GenError> for CliError {
    fn from(e: GenError) -> Self {
        match e {
            GenError::Pipeline { .. } => Self::external(e.to_string()),
            GenError::Params(_) => Self::usage(e.to_string()),
            GenError::Io(_) => Self::usage(e.to_string()),
            _ => Self::validation(e.to_string()),
        }
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::Io(_) => Self::usage(e.to_string()),
            _ => Self::validation(e.to_string()),
        }
    }
}
