use std::path::PathBuf;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const OTHER: i32 = 1;
    pub const INPUT: i32 = 2;
    pub const INFEASIBLE: i32 = 3;
    pub const TRIPWIRE: i32 = 4;
}

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("unknown key `{key}`; accepted keys: {accepted}")]
    UnknownKey { key: String, accepted: String },

    /// A config value violates a bound; `field` is the dotted key path.
    #[error("{field}: {message}")]
    Field { field: String, message: String },

    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: harq_core::Error,
    },

    #[error("writing output: {0}")]
    Io(#[from] std::io::Error),

    #[error("writing CSV: {0}")]
    Csv(#[from] csv::Error),

    #[error("{failures} analytic-vs-simulation z-scores exceed {limit} (largest |z| = {max_z:.3})")]
    Tripwire { failures: usize, limit: f64, max_z: f64 },

    #[error("worker pool: {0}")]
    Pool(String),
}

impl AppError {
    pub fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        AppError::Field {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Parse { .. } | AppError::UnknownKey { .. } | AppError::Field { .. } => exit::INPUT,
            AppError::Read { .. } => exit::INPUT,
            AppError::Core { source, .. } if source.is_infeasible() => exit::INFEASIBLE,
            AppError::Core {
                source: harq_core::Error::Invalid { .. } | harq_core::Error::Domain { .. },
                ..
            } => exit::INPUT,
            AppError::Tripwire { .. } => exit::TRIPWIRE,
            _ => exit::OTHER,
        }
    }
}

/// Attaches a context string to core errors.
pub trait Context<T> {
    fn context(self, what: impl Into<String>) -> Result<T, AppError>;
}

impl<T> Context<T> for Result<T, harq_core::Error> {
    fn context(self, what: impl Into<String>) -> Result<T, AppError> {
        self.map_err(|source| AppError::Core {
            context: what.into(),
            source,
        })
    }
}
