use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("configuration invalid:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("non-finite value at node {node} ({what})")]
    NonFinite { node: usize, what: &'static str },
    #[error("region is empty or has no quadrature weight: {0}")]
    EmptyRegion(String),
    #[error("value crosses a pole of the warped chart at node {node}")]
    PoleCrossing { node: usize },
    #[error("energy identity violated by {violation:.3e} (tolerance {tolerance:.3e}) at t = {t}")]
    EnergyIdentity { t: f64, violation: f64, tolerance: f64 },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("operation not supported: {0}")]
    Unsupported(String),
    #[error("point outside the domain: {0}")]
    OutOfDomain(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
