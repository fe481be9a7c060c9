use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {what} in {path}: {detail}")]
    Format {
        what: &'static str,
        path: PathBuf,
        detail: String,
    },

    #[error("length mismatch: shape {shape:?} needs {expected} values, found {found}")]
    LengthMismatch {
        shape: [usize; 3],
        expected: usize,
        found: usize,
    },

    #[error("non-finite score at voxel {0:?}")]
    NonFinite([usize; 3]),

    #[error("invalid region: {0}")]
    Roi(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("empty volume")]
    EmptyVolume,

    #[error("point {0:?} lies outside the volume")]
    OutOfBounds([i64; 3]),

    #[error("instance too large for exhaustive search ({0} assignments)")]
    TooLarge(u128),

    #[error("problem is infeasible")]
    Infeasible,

    #[error("solver backend failed: {0}")]
    Backend(String),

    #[error("solver hit its time limit without a feasible solution")]
    Timeout,

    #[error("block {block:?}: {source}")]
    Block {
        block: [usize; 3],
        #[source]
        source: Box<Error>,
    },

    #[error("inconsistent selection: {0}")]
    Inconsistent(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, path: impl Into<PathBuf>, detail: impl ToString) -> Self {
        Error::Format {
            what,
            path: path.into(),
            detail: detail.to_string(),
        }
    }
}
