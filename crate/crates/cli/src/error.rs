use std::fmt;
use std::io;

use qovae_core::analysis::AnalysisError;
use qovae_core::bayesopt::BoError;
use qovae_core::datagen::{GenError, LabelError};
use qovae_core::model::ModelError;
use qovae_core::nn::checkpoint::CheckpointError;
use qovae_core::optics::SimError;
use qovae_core::repr::{DatasetError, ParseError, ReprError};

/// Failure classes, each with its own exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Other,
    Usage,
    Input,
    Io,
    Simulation,
    Divergence,
}

impl Kind {
    pub fn exit_code(self) -> i32 {
        match self {
            Kind::Other => 1,
            Kind::Usage => 2,
            Kind::Input => 3,
            Kind::Io => 4,
            Kind::Simulation => 5,
            Kind::Divergence => 6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Kind::Other => "other",
            Kind::Usage => "usage",
            Kind::Input => "input",
            Kind::Io => "io",
            Kind::Simulation => "simulation",
            Kind::Divergence => "divergence",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: Kind, message: impl Into<String>) -> Self {
        CliError {
            kind,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(Kind::Usage, message)
    }

    pub fn input(message: impl Into<String>) -> Self {
        Self::new(Kind::Input, message)
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({
            "error": self.kind.name(),
            "exit_code": self.kind.exit_code(),
            "message": self.message,
        })
        .to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind.name(), self.message)
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::new(Kind::Io, e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            CliError::new(Kind::Io, e.to_string())
        } else {
            CliError::input(e.to_string())
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        if e.is_io() {
            CliError::new(Kind::Io, e.to_string())
        } else {
            CliError::input(e.to_string())
        }
    }
}

impl From<ParseError> for CliError {
    fn from(e: ParseError) -> Self {
        CliError::input(e.to_string())
    }
}

impl From<ReprError> for CliError {
    fn from(e: ReprError) -> Self {
        CliError::input(e.to_string())
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io(e) => e.into(),
            other => CliError::input(other.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::new(Kind::Simulation, e.to_string())
    }
}

impl From<LabelError> for CliError {
    fn from(e: LabelError) -> Self {
        CliError::new(Kind::Simulation, e.to_string())
    }
}

impl From<GenError> for CliError {
    fn from(e: GenError) -> Self {
        match e {
            GenError::Spec(m) => CliError::usage(m),
            other => CliError::new(Kind::Other, other.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io(e) => e.into(),
            other => CliError::input(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Diverged { .. } => CliError::new(Kind::Divergence, e.to_string()),
            ModelError::Io(e) => e.into(),
            ModelError::Checkpoint(e) => e.into(),
            ModelError::Config(_) => CliError::usage(e.to_string()),
            ModelError::Repr(_) | ModelError::EmptyDataset | ModelError::Shape(_) => {
                CliError::input(e.to_string())
            }
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Io(e) => e.into(),
            AnalysisError::Model(e) => e.into(),
            other => CliError::input(other.to_string()),
        }
    }
}

impl From<BoError> for CliError {
    fn from(e: BoError) -> Self {
        match e {
            BoError::Model(e) => e.into(),
            BoError::Invalid(m) => CliError::usage(m),
            other => CliError::input(other.to_string()),
        }
    }
}
