use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("degenerate density at b = {0}")]
    DegenerateDensity(f64),
    #[error("loser-regret singularity (1 + beta = {0:e})")]
    LoserRegretSingularity(f64),
    #[error("valuation below learning floor (v = {v}, floor = {floor})")]
    BelowLearningFloor { v: f64, floor: f64 },
    #[error("quadrature did not converge on [{lo}, {hi}]")]
    Quadrature { lo: f64, hi: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Invalid(msg.into()))
}
