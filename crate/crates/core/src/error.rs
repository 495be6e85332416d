use thiserror::Error;

/// Errors raised by the library. The variants group into configuration
/// problems (bad names, sizes, out-of-range queries) and numerical aborts
/// (domain errors, ill-posed targets, divergence).
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("ill-posed targets at t={t}: target variance {variance} must be positive")]
    IllPosedTargets { t: f64, variance: f64 },

    #[error("degenerate scaling: {0}")]
    Degenerate(String),

    #[error("infeasible targets: {0}")]
    Infeasible(String),

    #[error("query outside range: {0}")]
    Range(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("divergence: {0}")]
    Divergence(String),

    #[error("non-finite gradient: {0}")]
    NonFinite(String),

    #[error("refused: {0}")]
    Refused(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by the run configuration rather than by the
    /// numerics of a particular run.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Range(_) | Error::Refused(_) | Error::Unsupported(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
