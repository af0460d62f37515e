use std::fmt;
use std::path::Path;

use aqilens_core::canonical::to_canonical_json;
use aqilens_core::model::ModelError;
use aqilens_core::pipeline::PipelineError;
use serde::Serialize;

/// A failed command: a module-qualified code plus a human message. Printed
/// to stderr as `{"error":{"code":…,"message":…}}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CliError {
    pub code: String,
    pub message: String,
}

impl CliError {
    pub fn new(code: impl Into<String>, message: impl Into<String>) -> Self {
        CliError { code: code.into(), message: message.into() }
    }

    pub fn config(message: impl Into<String>) -> Self {
        CliError::new("cli.Config", message)
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::new("cli.Io", format!("{}: {err}", path.display()))
    }

    pub fn from_model(e: ModelError) -> Self {
        PipelineError::from(e).into()
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Wrapper<'a> {
            error: &'a CliError,
        }
        to_canonical_json(&Wrapper { error: self })
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl std::error::Error for CliError {}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        CliError::new(e.code(), e.to_string())
    }
}

macro_rules! via_pipeline {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                PipelineError::from(e).into()
            }
        }
    )*};
}

via_pipeline!(
    aqilens_core::ingest::IngestError,
    aqilens_core::aqi_pca::AqiError,
    aqilens_core::stats::StatsError,
    ModelError,
    aqilens_core::scenario::ScenarioError,
    aqilens_core::report::ReportError
);

impl From<aqilens_service::ServiceError> for CliError {
    fn from(e: aqilens_service::ServiceError) -> Self {
        let code = match &e {
            aqilens_service::ServiceError::EmptyPanel => "service.EmptyPanel",
            aqilens_service::ServiceError::Io { .. } => "service.Io",
            _ => "service.Load",
        };
        CliError::new(code, e.to_string())
    }
}
