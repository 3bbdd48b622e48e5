use thiserror::Error;

pub type Result<T> = std::result::Result<T, NswError>;

#[derive(Debug, Error)]
pub enum NswError {
    #[error("schema violation at {path}: {message}")]
    Schema { path: String, message: String },

    #[error("enumeration cap exceeded: {what} needs {needed}, cap is {cap}")]
    CapExceeded { what: String, needed: f64, cap: f64 },

    #[error("{0}")]
    Incompatible(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no convergence: {0}")]
    NonConvergence(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl NswError {
    pub fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        NswError::Schema {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn invariant(message: impl Into<String>) -> Self {
        NswError::Invariant(message.into())
    }

    pub fn cap(what: impl Into<String>, needed: f64, cap: f64) -> Self {
        NswError::CapExceeded {
            what: what.into(),
            needed,
            cap,
        }
    }

    /// Process exit code for the CLI: 1 usage/I-O, 2 invariant violation,
    /// 3 oracle cap.
    pub fn exit_code(&self) -> i32 {
        match self {
            NswError::Invariant(_) | NswError::NonConvergence(_) => 2,
            NswError::CapExceeded { .. } => 3,
            _ => 1,
        }
    }
}
