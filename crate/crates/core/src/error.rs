use std::path::PathBuf;

/// Errors raised by the adjustment library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("point at or behind the projection center (depth {depth:e})")]
    DepthNonPositive { depth: f64 },

    #[error("redundancy {0} is not positive")]
    NonPositiveRedundancy(i64),

    #[error("3x3 normal block of point {0} is singular")]
    SingularPointBlock(usize),

    #[error("conjugate gradients stalled after {iterations} iterations (relative residual {relative_residual:e})")]
    CgStagnated {
        iterations: usize,
        relative_residual: f64,
    },

    #[error("adjustment diverged: sigma0 {sigma0} exceeds 10x the initial {initial}")]
    DivergenceDetected { sigma0: f64, initial: f64 },

    #[error("intersection of point {point} did not converge: {reason}")]
    IntersectionDiverged { point: usize, reason: &'static str },

    #[error("invalid block: {0}")]
    InvalidBlock(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{what} index {index} out of range (count {count})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        count: usize,
    },

    #[error("unsupported format version {found:?}, expected {expected:?}")]
    VersionMismatch { found: String, expected: &'static str },

    #[error("generator spec infeasible: {0}")]
    SpecInfeasible(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
