use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("unsupported kernel: {0}")]
    UnsupportedKernel(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// Process exit code used by the command-line frontend.
    ///
    /// 2 covers validation problems (bad files, bad designs, bad geometry);
    /// 3 covers numerical and optimization failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Input(_)
            | Error::Parse { .. }
            | Error::DegenerateGeometry(_)
            | Error::Io(_)
            | Error::Json(_) => 2,
            Error::UnsupportedKernel(_) | Error::Numerical(_) | Error::Optimization(_) => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
