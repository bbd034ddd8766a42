use std::fmt;
use std::path::Path;

use xlsv_core::Error;

/// Usage errors exit with 2, data errors with 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(Error),
    /// A data error tied to an input file.
    File(String, Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) | CliError::File(..) => 1,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Data(e)
    }
}

/// Stable machine-readable category of a library error.
pub fn kind(e: &Error) -> &'static str {
    match e {
        Error::Io { .. } => "io",
        Error::Parse { .. } => "parse",
        Error::EmptyTable(_) | Error::Missing { .. } | Error::LengthMismatch(..) => "data",
        Error::KeyMismatch { .. } | Error::UnlabelledTrial { .. } => "data",
        Error::ZeroVector | Error::OutOfRange(_) => "data",
        Error::DegenerateCohort { .. } | Error::EmptyCohort => "cohort",
        Error::Config(_) => "config",
        Error::SingleClass { .. } | Error::NonConvergence { .. } => "calibration",
        Error::MissingFeature(_) | Error::DuplicateFeature(_) | Error::UnknownFeature(_) => {
            "feature"
        }
        Error::RecipeMismatch { .. } => "recipe",
        Error::ImpossibleQuota { .. } => "quota",
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let line = match self {
            CliError::Usage(msg) => format!("error: usage: {msg}"),
            CliError::Data(e) => format!("error: {}: {e}", kind(e)),
            CliError::File(path, e) => format!("error: {}: {path}: {e}", kind(e)),
        };
        // Keep the report on one line whatever the underlying message holds.
        f.write_str(&line.replace('\n', " "))
    }
}

/// Attaches the file name to errors raised while reading it.
pub trait FileContext<T> {
    fn in_file(self, path: &Path) -> Result<T, CliError>;
}

impl<T> FileContext<T> for xlsv_core::Result<T> {
    fn in_file(self, path: &Path) -> Result<T, CliError> {
        self.map_err(|e| match e {
            // Io errors already carry the path.
            Error::Io { .. } => CliError::Data(e),
            other => CliError::File(path.display().to_string(), other),
        })
    }
}
