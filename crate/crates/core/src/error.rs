use std::path::PathBuf;

/// Failure classes surfaced by the library. The CLI maps each class to its
/// own exit code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("point {point:?} lies outside the domain on axis {axis}")]
    Domain { point: Vec<f64>, axis: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("numerical degeneracy: {0}")]
    Degenerate(String),
    #[error("shift {re}+{im}i is (numerically) an eigenvalue: factorization is singular")]
    SingularShift { re: f64, im: f64 },
    #[error("no convergence: {0}")]
    NoConvergence(String),
    #[error("operation not supported for the {0} scheme")]
    UnsupportedScheme(&'static str),
    #[error("Euler-Maruyama step too large: reflection did not terminate")]
    StepTooLarge,
    #[error("no ensemble points started inside the set")]
    NoStarters,
    #[error("io error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {path:?}: {msg}")]
    Parse { path: PathBuf, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
