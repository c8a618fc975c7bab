use thiserror::Error;

use crate::kernels::Regime;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degree {degree} exceeds the Hermite degree cap of {cap}")]
    DegreeCap { degree: usize, cap: usize },

    #[error("stationary scales differ ({left} vs {right}); functions live in different L2(mu)")]
    ScaleMismatch { left: f64, right: f64 },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("operation requires the symmetric kernel (a0 = a1, b0 = b1 = 0, rho = 0)")]
    NotSymmetric,

    #[error("wrong regime: {operation} requires {expected} but a = {a} is {actual}")]
    WrongRegime {
        operation: &'static str,
        expected: &'static str,
        actual: Regime,
        a: f64,
    },

    #[error("depth {n} exceeds the cap {max} (one generation would need {bytes} bytes)")]
    ResourceCap { n: usize, max: usize, bytes: u64 },

    #[error("series did not reach tolerance {tol:e} within {max_terms} terms")]
    NoConvergence { tol: f64, max_terms: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
