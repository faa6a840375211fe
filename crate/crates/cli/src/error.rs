use std::path::PathBuf;

use feh_core::catalog::CatalogError;
use feh_core::dataset::DatasetError;
use feh_core::preprocess::PreprocessError;
use feh_core::train::EvalError;
use feh_core::weighting::WeightingError;
use feh_nn::NnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("missing input: {0}")]
    MissingInput(PathBuf),
    #[error("configuration: {0}")]
    Config(String),
    #[error("catalog: {0}")]
    Catalog(#[from] CatalogError),
    #[error("preprocess: {0}")]
    Preprocess(String),
    #[error("weighting: {0}")]
    Weighting(#[from] WeightingError),
    #[error("evaluation: {0}")]
    Eval(#[from] EvalError),
    #[error("integrity: {0}")]
    Integrity(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// Process exit status; see the table in the README.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::MissingInput(_) => 3,
            CliError::Config(_) => 4,
            CliError::Catalog(_) => 5,
            CliError::Preprocess(_) => 6,
            CliError::Weighting(_) | CliError::Eval(_) => 7,
            CliError::Integrity(_) => 8,
            CliError::Io { .. } => 9,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

impl From<PreprocessError> for CliError {
    fn from(e: PreprocessError) -> Self {
        CliError::Preprocess(e.to_string())
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::SnapshotMismatch(_) | NnError::MalformedSnapshot(_) => CliError::Integrity(e.to_string()),
            NnError::InvalidSpec(_) => CliError::Config(e.to_string()),
            other => CliError::Eval(EvalError::Nn(other)),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io(source) => CliError::Io {
                path: PathBuf::new(),
                source,
            },
            other => CliError::Integrity(other.to_string()),
        }
    }
}
