use thiserror::Error;

/// Errors surfaced by grid construction, flow stepping and scenario setup.
#[derive(Debug, Error)]
pub enum PflowError {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid target: {0}")]
    InvalidTarget(String),

    #[error("invalid certificate: {0}")]
    InvalidCertificate(String),

    #[error("invalid flow configuration: {0}")]
    InvalidConfig(String),

    #[error("field shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("point left the tubular neighbourhood of the target (constraint violation {violation:.3e} > {tol:.3e})")]
    OffManifold { violation: f64, tol: f64 },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("flow aborted at t={t}: {reason}")]
    FlowAborted { t: f64, reason: String },

    #[error("sample outside the certified set: {0}")]
    OutsideDomain(String),

    #[error("diagnostic precondition not met: {0}")]
    Precondition(String),

    #[error("scenario rejected: {0}")]
    ScenarioRejected(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("config parse error: {0}")]
    ConfigParse(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PflowError>;
