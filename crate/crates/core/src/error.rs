use std::path::PathBuf;

/// Errors raised anywhere in the solver pipeline.
#[derive(Debug, thiserror::Error)]
pub enum TrtError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual} ({what})")]
    Dimension {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("{stage} did not converge after {iterations} iterations (last relative change {residual:.3e})")]
    Convergence {
        stage: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("singular system in {0}")]
    Singular(&'static str),

    #[error("archive does not match configuration: {0}")]
    ArchiveMismatch(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },
}

impl TrtError {
    /// Process exit code for the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            TrtError::Config(_) | TrtError::InvalidArgument(_) | TrtError::Dimension { .. } => 2,
            TrtError::Convergence { .. } | TrtError::Singular(_) => 3,
            TrtError::ArchiveMismatch(_) => 4,
            TrtError::Io { .. } | TrtError::Format { .. } => 5,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TrtError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, TrtError>;

pub(crate) fn check_len(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(TrtError::Dimension {
            what,
            expected,
            actual,
        })
    }
}
