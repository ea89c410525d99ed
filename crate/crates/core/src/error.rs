use crate::allometry::AllometryError;
use crate::evaluate::EvalError;
use crate::features::FeatureError;
use crate::las_io::{GeometryError, LasError};
use crate::metrics::MetricsError;
use crate::models::ModelError;
use crate::preprocess::PreprocessError;
use crate::synth::SynthError;
use crate::waveform::WaveformError;
use std::path::PathBuf;
use thiserror::Error;

/// Any failure surfaced by the library, grouped for exit-code reporting.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Las(#[from] LasError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Waveform(#[from] WaveformError),
    #[error(transparent)]
    Allometry(#[from] AllometryError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

/// Broad failure category.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Synth(SynthError::Invalid(_) | SynthError::Toml(_)) => {
                ErrorKind::Config
            }
            Error::Waveform(WaveformError::InvalidConfig(_)) => ErrorKind::Config,
            Error::Model(ModelError::InvalidParameter(_) | ModelError::EmptyGrid) => {
                ErrorKind::Config
            }
            Error::Preprocess(PreprocessError::InvalidParameter(_)) => ErrorKind::Config,
            Error::Model(
                ModelError::NonConvergence { .. }
                | ModelError::RankDeficient(_)
                | ModelError::NoUsableSubset,
            ) => ErrorKind::Numerical,
            Error::Waveform(WaveformError::DegenerateFit(_) | WaveformError::NoComponents) => {
                ErrorKind::Numerical
            }
            Error::Context { source, .. } => source.kind(),
            _ => ErrorKind::Data,
        }
    }

    /// Process exit code: 2 configuration, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Numerical => 4,
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
