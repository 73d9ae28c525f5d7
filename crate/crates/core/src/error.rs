use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("basis truncation did not converge: {0}")]
    Truncation(String),

    #[error("fit did not converge (status {status}): {message}")]
    NotConverged { status: String, message: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("unknown {kind} '{name}'; available: {}", available.join(", "))]
    Unknown {
        kind: &'static str,
        name: String,
        available: Vec<String>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable class used by the command line front end.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Validation(_) => "validation",
            Error::Parse { .. } => "parse",
            Error::Config(_) => "config",
            Error::Truncation(_) => "truncation",
            Error::NotConverged { .. } => "non_convergence",
            Error::InsufficientData(_) => "insufficient_data",
            Error::Unknown { .. } => "unknown_name",
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                "missing_file"
            }
            Error::Io { .. } => "io",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.class() {
            "missing_file" => 3,
            "io" => 4,
            "config" => 5,
            "parse" => 6,
            "validation" | "unknown_name" | "insufficient_data" => 7,
            "domain" => 8,
            "non_convergence" | "truncation" => 9,
            _ => 1,
        }
    }
}
