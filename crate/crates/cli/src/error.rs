//! One error type across the pipeline commands, carrying a stable process
//! exit code per failure class.

use std::fmt;
use std::path::PathBuf;

use tres_core::datagen::DatagenError;
use tres_core::eval::EvalError;
use tres_core::interpret::InterpretError;
use tres_core::model::ModelError;
use tres_core::numerics::NumericsError;
use tres_core::select::SelectError;
use tres_core::train::TrainError;

/// Exit code for configuration and validation failures.
pub const EXIT_CONFIG: i32 = 2;
/// Exit code for numeric failures (non-finite losses and the like).
pub const EXIT_NUMERIC: i32 = 3;
/// Exit code for filesystem and format failures.
pub const EXIT_IO: i32 = 4;

/// Any failure a subcommand can surface.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration, bad arguments, or a core validation rejection.
    Config { detail: String },
    /// A numeric failure inside training or attribution.
    Numeric { detail: String },
    /// A filesystem failure, tagged with the path involved.
    Io { path: PathBuf, detail: String },
    /// A file parsed but its content broke the format contract.
    Format { path: PathBuf, detail: String },
}

impl CliError {
    pub fn config(detail: impl Into<String>) -> Self {
        CliError::Config {
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, err: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            detail: err.to_string(),
        }
    }

    pub fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        CliError::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }

    /// The process exit code this failure maps to.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => EXIT_CONFIG,
            CliError::Numeric { .. } => EXIT_NUMERIC,
            CliError::Io { .. } | CliError::Format { .. } => EXIT_IO,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config { detail } => write!(f, "configuration error: {detail}"),
            CliError::Numeric { detail } => write!(f, "numeric failure: {detail}"),
            CliError::Io { path, detail } => {
                write!(f, "io error at {}: {detail}", path.display())
            }
            CliError::Format { path, detail } => {
                write!(f, "bad file {}: {detail}", path.display())
            }
        }
    }
}

impl std::error::Error for CliError {}

impl From<DatagenError> for CliError {
    fn from(e: DatagenError) -> Self {
        CliError::Config {
            detail: e.to_string(),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Config {
            detail: e.to_string(),
        }
    }
}

impl From<NumericsError> for CliError {
    fn from(e: NumericsError) -> Self {
        CliError::Numeric {
            detail: e.to_string(),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFiniteLoss { .. } => CliError::Numeric {
                detail: e.to_string(),
            },
            other => CliError::Config {
                detail: other.to_string(),
            },
        }
    }
}

impl From<InterpretError> for CliError {
    fn from(e: InterpretError) -> Self {
        match e {
            InterpretError::NonFinite { .. } | InterpretError::Numerics(_) => CliError::Numeric {
                detail: e.to_string(),
            },
            other => CliError::Config {
                detail: other.to_string(),
            },
        }
    }
}

impl From<SelectError> for CliError {
    fn from(e: SelectError) -> Self {
        match e {
            SelectError::NonFinite { .. } => CliError::Numeric {
                detail: e.to_string(),
            },
            other => CliError::Config {
                detail: other.to_string(),
            },
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Config {
            detail: e.to_string(),
        }
    }
}
