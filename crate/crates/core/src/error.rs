use std::path::PathBuf;

/// Every failure the library reports. Callers map variants onto exit codes,
/// so a variant is added only when it needs distinct handling.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shapes, ranges or parameters that break a documented precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A cosine was requested for a zero-norm vector.
    #[error("undefined angle: {0}")]
    UndefinedAngle(String),

    /// An iterative method did not converge or produced non-finite values.
    #[error("numerical failure in {what} (residual {residual:e})")]
    Numerical { what: String, residual: f64 },

    #[error("unknown layer `{0}`")]
    UnknownLayer(String),

    /// A rule or run configuration that cannot be honoured for this model.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed manifest: {0}")]
    MalformedManifest(String),

    #[error("layer `{layer}`: missing tensor `{tensor}`")]
    MissingTensor { layer: String, tensor: String },

    #[error("layer `{layer}`: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        layer: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn numerical(what: impl Into<String>, residual: f64) -> Self {
        Error::Numerical {
            what: what.into(),
            residual,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// True for failures caused by bad files on disk rather than bad arguments.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Format { .. }
                | Error::MalformedManifest(_)
                | Error::MissingTensor { .. }
                | Error::ShapeMismatch { .. }
        )
    }

    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical { .. } | Error::UndefinedAngle(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
