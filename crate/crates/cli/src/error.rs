use std::path::{Path, PathBuf};

use amid::training::TrainError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("missing input {}", .0.display())]
    MissingInput(PathBuf),
    #[error("{}", match .line { Some(l) => format!("line {l}: {msg}"), None => msg.clone() })]
    Parse { line: Option<usize>, msg: String },
    #[error("{0}")]
    Config(String),
    #[error("non-finite loss at step {step}")]
    NonFinite { step: u64 },
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn from_io(path: &Path, e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::MissingInput(path.to_path_buf())
        } else {
            CliError::Other(format!("{}: {e}", path.display()))
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::MissingInput(_) => 2,
            CliError::Parse { .. } => 3,
            CliError::NonFinite { .. } => 4,
            CliError::Config(_) | CliError::Other(_) => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::MissingInput(_) => "missing_input",
            CliError::Parse { .. } => "parse",
            CliError::Config(_) => "config",
            CliError::NonFinite { .. } => "non_finite",
            CliError::Other(_) => "failure",
        }
    }

    /// `error code=<n> kind=<kind> [line=<n>] msg="<text>"` on one line.
    pub fn report(&self) -> String {
        let line = match self {
            CliError::Parse { line: Some(l), .. } => format!(" line={l}"),
            _ => String::new(),
        };
        let msg = self.to_string().replace('\n', " ").replace('"', "'");
        format!(
            "error code={} kind={}{line} msg=\"{msg}\"",
            self.exit_code(),
            self.kind()
        )
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFinite { step, .. } => CliError::NonFinite { step },
            other => CliError::Other(other.to_string()),
        }
    }
}

macro_rules! other_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Other(e.to_string())
            }
        }
    )*};
}

other_from!(
    amid::sampling::SamplingError,
    amid::evaluation::EvalError,
    amid::denoiser::DenoiserError,
    amid::schedule::ScheduleError,
    std::io::Error
);

impl From<amid::imaging::DatasetError> for CliError {
    fn from(e: amid::imaging::DatasetError) -> Self {
        match e {
            amid::imaging::DatasetError::MissingFile(p) => CliError::MissingInput(p),
            other => CliError::Other(other.to_string()),
        }
    }
}
