use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value or combination of values.
    #[error("configuration error: {0}")]
    Config(String),

    /// Command-line misuse that clap itself cannot catch.
    #[error("usage error: {0}")]
    Usage(String),

    /// On-disk data that does not follow the expected layout.
    #[error("format error: {0}")]
    Format(String),

    /// Data that parses but contradicts itself (shape drift, digest mismatch).
    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("diffusion step {t} out of range 1..={steps}")]
    StepOutOfRange { t: usize, steps: usize },

    /// Shapes or layouts handed to a model or metric do not agree.
    #[error("contract error: {0}")]
    Contract(String),

    /// A conditioning layout cannot be drawn or is malformed.
    #[error("layout error: {0}")]
    Layout(String),

    /// Only contiguous observed prefixes are planned.
    #[error("unsupported layout: {0}")]
    UnsupportedLayout(String),

    #[error("invalid sampling scheme: {0}")]
    Scheme(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("numerical degeneracy: {0}")]
    NumericalDegeneracy(String),

    #[error("checkpoint incompatible: {0}")]
    CheckpointCompat(String),

    /// Narration endpoint could not be reached; safe to retry.
    #[error("transport error: {0}")]
    Transport(String),

    /// Narration endpoint answered with something we cannot interpret.
    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("request validation error: {0}")]
    RequestValidation(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for the command-line front end.
    ///
    /// 2 usage/configuration, 3 data or format, 4 transport, 5 numerical
    /// degeneracy. Anything else that reaches the top level is reported as a
    /// data error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Usage(_) => 2,
            Error::Transport(_) => 4,
            Error::NumericalDegeneracy(_) => 5,
            _ => 3,
        }
    }
}
