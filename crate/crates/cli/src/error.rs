use std::io;
use std::path::PathBuf;

use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] osp_core::Error),
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{0}")]
    Input(String),
}

impl CliError {
    /// Downstream reader closed stdout, as with `| head`.
    pub fn is_broken_pipe(&self) -> bool {
        matches!(self, CliError::Write { source, .. } if source.kind() == std::io::ErrorKind::BrokenPipe)
    }

    pub fn kind(&self) -> &'static str {
        use osp_core::Error as E;
        match self {
            CliError::Core(E::Tensor(_)) => "tensor",
            CliError::Core(E::Wavelet(_)) => "wavelet",
            CliError::Core(E::Stream(_)) => "stream",
            CliError::Core(E::Skiparse(_)) => "skiparse",
            CliError::Core(E::Bucket(_)) => "bucket",
            CliError::Core(E::Guard(_)) => "gradguard",
            CliError::Core(E::Curation(_)) => "curate",
            CliError::Read { .. } | CliError::Write { .. } => "io",
            CliError::Parse { .. } => "parse",
            CliError::Input(_) => "input",
        }
    }
}

macro_rules! from_core {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Core(e.into())
            }
        })*
    };
}

from_core!(
    osp_core::tensor::TensorError,
    osp_core::wavelet::WaveletError,
    osp_core::causal::StreamError,
    osp_core::skiparse::SkiparseError,
    osp_core::bucket::BucketError,
    osp_core::guard::GuardError,
    osp_core::curation::CurationError
);

#[derive(Serialize)]
struct ErrorBody<'a> {
    kind: &'a str,
    message: String,
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: ErrorBody<'a>,
}

pub fn error_json(e: &CliError) -> String {
    serde_json::to_string(&ErrorReport {
        error: ErrorBody {
            kind: e.kind(),
            message: e.to_string(),
        },
    })
    .expect("error report serializes")
}

pub type Result<T> = std::result::Result<T, CliError>;
