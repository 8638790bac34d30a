use thiserror::Error;

/// Process exit code for success.
pub const EXIT_OK: i32 = 0;
/// Unreadable or invalid scenario, bad flags.
pub const EXIT_CONFIG: i32 = 2;
/// The field failed the growth or Lipschitz checks.
pub const EXIT_CERTIFICATION: i32 = 3;
/// Integration overflow or a failed linear solve.
pub const EXIT_NUMERICAL: i32 = 4;
/// Output could not be written.
pub const EXIT_IO: i32 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("certification failure: {0}")]
    Certification(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Certification(_) => EXIT_CERTIFICATION,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::Io { .. } | CliError::Csv(_) => EXIT_IO,
        }
    }

    /// Wraps a library error, prefixing it with the scenario section it came from.
    pub(crate) fn from_core(section: &str, err: switchavg::Error) -> Self {
        use switchavg::Error as E;
        match err {
            E::Certification(msg) => CliError::Certification(msg),
            e @ (E::Numerical(_) | E::NonFinite { .. }) => CliError::Numerical(e.to_string()),
            e => CliError::Config(format!("{section}: {e}")),
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
