use thiserror::Error;

/// Errors raised by schedules, solvers, grids and the harness.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("time {t} outside the schedule domain [{lo}, {hi}]")]
    Domain { t: f64, lo: f64, hi: f64 },
    #[error("lambda {0} is outside the image of the schedule")]
    LambdaRange(f64),
    #[error("phi argument {0} exceeds the supported range")]
    Range(f64),
    #[error("non-positive step in lambda (h = {h}) from t = {s} to t = {t}")]
    Step { s: f64, t: f64, h: f64 },
    #[error("degenerate grid: t[{i}] and t[{j}] are both {t}")]
    DegenerateGrid { i: usize, j: usize, t: f64 },
    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
