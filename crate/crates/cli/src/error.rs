use std::fmt;
use std::path::Path;

use paa_core::alignment::AlignError;
use paa_core::data::DataError;
use paa_core::diffcore::DiffError;
use paa_core::model::ModelError;
use paa_core::trainer::TrainError;

/// Failure classes, each with its own exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    pub fn io(path: &Path, e: impl fmt::Display) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numeric(m) if m.starts_with("numeric failure") => f.write_str(m),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

fn diff_is_numeric(e: &DiffError) -> bool {
    matches!(e, DiffError::NonFinite { .. } | DiffError::LogDomain { .. })
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        let numeric = match &e {
            TrainError::Numeric { .. } => true,
            TrainError::Diff(d) | TrainError::Model(ModelError::Diff(d)) | TrainError::Align(AlignError::Diff(d)) => diff_is_numeric(d),
            _ => false,
        };
        let text = e.to_string();
        match e {
            _ if numeric => CliError::Numeric(text),
            TrainError::Config(_) => CliError::Usage(text),
            _ => CliError::Data(text),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        TrainError::from(e).into()
    }
}
