use std::path::PathBuf;

use rbpn_tensor::TensorError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid config ({field}): {message}")]
    Config { field: &'static str, message: String },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("arity error: expected {expected} {what}, got {got}")]
    Arity {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("out of range: {0}")]
    Range(String),

    #[error("malformed flow file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("missing precomputed flow for sequence `{seq}`, target {target}, neighbor {neighbor} (looked for {path})")]
    MissingFlow {
        seq: String,
        target: usize,
        neighbor: usize,
        path: PathBuf,
    },

    #[error("flow command failed: {0}")]
    Subprocess(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("dataset layout error at {path}: {reason}")]
    Layout { path: PathBuf, reason: String },

    #[error("sequence `{seq}` has {frames} frame(s) but the context needs at least {needed}")]
    EmptySequence { seq: String, frames: usize, needed: usize },

    #[error("patch of {patch} LR pixels does not fit a {width}x{height} LR frame")]
    PatchTooLarge { patch: usize, width: usize, height: usize },

    #[error("training diverged at step {step}: loss = {loss}")]
    Divergence { step: u64, loss: f64 },

    #[error("non-finite values in {0}")]
    NonFinite(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error at {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

/// Coarse classification used by the command-line front end.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(field: &'static str, message: impl Into<String>) -> Self {
        Error::Config {
            field,
            message: message.into(),
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config { .. } | Error::Range(_) | Error::Arity { .. } => ErrorClass::Usage,
            Error::Divergence { .. } | Error::NonFinite(_) => ErrorClass::Numeric,
            Error::Context { source, .. } => source.class(),
            _ => ErrorClass::Data,
        }
    }
}

pub(crate) trait ResultExt<T> {
    fn context_with(self, f: impl FnOnce() -> String) -> Result<T>;
}

impl<T> ResultExt<T> for Result<T> {
    fn context_with(self, f: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|e| e.context(f()))
    }
}
