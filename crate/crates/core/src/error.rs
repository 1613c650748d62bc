use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("singular Green's function: source and receiver coincide at ({x}, {y})")]
    Singularity { x: f64, y: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("connectivity graph is disconnected ({} components, sizes {:?})", .components.len(), .components.iter().map(Vec::len).collect::<Vec<_>>())]
    Disconnected { components: Vec<Vec<usize>> },

    #[error("embedding needs {needed} positive eigenvalues but only {found} were found")]
    Rank { needed: usize, found: usize },

    #[error("dictionary learning aborted: objective increased for {consecutive} consecutive alternations (last {last:.6e}, best {best:.6e})")]
    ObjectiveIncrease {
        consecutive: usize,
        last: f64,
        best: f64,
    },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {message}")]
    Parse { path: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Name of the failing pipeline stage, if any.
    pub fn stage(&self) -> Option<&str> {
        match self {
            Error::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
