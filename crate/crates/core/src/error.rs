use thiserror::Error;

/// Errors raised by model loading, geometry checks, LMI construction and solving.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("schema error in {layer}: {msg}")]
    Schema { layer: String, msg: String },
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("structure violation: {0}")]
    Structure(String),
    #[error("solver failed: {0}")]
    Solver(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn schema(layer: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Schema {
            layer: layer.into(),
            msg: msg.into(),
        }
    }

    /// I/O error carrying the path it concerns.
    pub(crate) fn io_at(path: &std::path::Path, e: std::io::Error) -> Self {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    }

    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Solver(_) | Error::Validation(_) => 3,
            _ => 2,
        }
    }
}
