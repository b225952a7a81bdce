use std::path::PathBuf;

/// Errors raised by geometry construction, assembly, solvers and I/O.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("`{parameter}` is not aligned to the voxel grid: {detail}")]
    Alignment { parameter: String, detail: String },

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("tensor is not symmetric positive definite at x={x:?}, y={y:?}: {detail}")]
    Ellipticity {
        x: [f64; 3],
        y: [f64; 3],
        detail: String,
    },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error(
        "inconsistent singular system: nullspace component {component:.3e} exceeds {tolerance:.1e}"
    )]
    Inconsistent { component: f64, tolerance: f64 },

    #[error("conjugate gradients did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("resource limit exceeded: {0}")]
    Resource(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Wraps the error with a note on where it happened.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
