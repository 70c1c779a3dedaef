use std::path::PathBuf;

/// Errors produced by the estimation kernels, generators and harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("sample {index} has dimension {found}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },

    #[error("user {user} out of range (num_users = {num_users})")]
    UserOutOfRange { user: usize, num_users: usize },

    #[error("pairwise gap requires two distinct users, got ({0}, {0})")]
    SameUser(usize),

    #[error("candidate set is empty")]
    EmptyCandidates,

    #[error("chosen index {index} out of range for {len} candidates")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("adaptive quadrature did not converge within {max_depth} subdivision levels")]
    QuadratureDiverged { max_depth: u32 },

    #[error("cannot request {clusters} clusters from {users} users")]
    TooManyClusters { clusters: usize, users: usize },

    #[error("ratings matrix has {users} users and {items} items, need at least {dim} of each")]
    NotEnoughRatings {
        users: usize,
        items: usize,
        dim: usize,
    },

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("io error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
