use thiserror::Error;

/// Errors produced by the model, simulator, trace lab and bench harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid service distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("hit ratio {0} outside [0, 1]")]
    HitRatioOutOfRange(f64),

    #[error("{0} requires a fraction source")]
    MissingFractions(&'static str),

    #[error("{0} has no printed closed-form bound; use the generic engine")]
    UnsupportedPolicy(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("capacity {capacity} below the minimum {minimum} for {policy}")]
    CapacityTooSmall {
        policy: &'static str,
        capacity: usize,
        minimum: usize,
    },

    #[error("post-run audit failed: {0}")]
    AuditFailed(String),
    #[error("timer resolution too coarse: {0}")]
    TimerResolution(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
