use std::path::PathBuf;

/// Errors raised by the library and surfaced by the CLI.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error(
        "integral gain {ki} is outside the certified interval (0, {conservative}); \
         the linearized loop is stable up to {sharp}"
    )]
    GainTooLarge {
        ki: f64,
        conservative: f64,
        sharp: f64,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("Newton iteration failed at t = {t} (residual {residual:e} after {iterations} iterations)")]
    StepFailure {
        t: f64,
        residual: f64,
        iterations: usize,
    },

    #[error("flux lost positivity at t = {t} (psi = {psi}, F = {flux})")]
    Divergence { t: f64, psi: f64, flux: f64 },

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the CLI: 2 config, 3 numerical, 4 verification.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_) | Error::GainTooLarge { .. } | Error::Config(_) | Error::Io { .. } => 2,
            Error::StepFailure { .. } | Error::Divergence { .. } => 3,
            Error::Verification(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
