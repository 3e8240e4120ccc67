use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("topology {0} is not connected")]
    Disconnected(u32),
    #[error("eigensolver failed to converge: {0}")]
    Eigensolver(String),
    #[error("eigenvalue ratio of topology {topology} is not rational within tolerance")]
    IrrationalRatio { topology: u32 },
    #[error("invalid dwell parameters: {0}")]
    InvalidParams(String),
    #[error("dwell construction inapplicable: xi = {xi} is not below alpha = {alpha}")]
    InapplicableDwell { xi: f64, alpha: f64 },
    #[error("time {t} lies outside the schedule horizon {horizon}")]
    OutOfHorizon { t: f64, horizon: f64 },
    #[error("no Hurwitz mode available for a Lyapunov weight")]
    NoHurwitzMode,
    #[error("weight matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("state became non-finite at t = {time}")]
    InstabilityOverflow { time: f64 },
    #[error("no stealthy prefix exists for the requested attack onset")]
    NoStealthyPrefix,
    #[error("no zero-dynamics attack exists for the given stealth set")]
    NoZda,
    #[error("schedule mismatch at t = {time}: {detail}")]
    ScheduleMismatch { time: f64, detail: String },
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("scenario error: {0}")]
    Scenario(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
