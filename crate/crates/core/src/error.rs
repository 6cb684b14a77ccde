use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("config: {0}")]
    Config(String),

    #[error("{block}: no convergence after {iterations} iterations, residual {residual:.3e} (residuals {residuals:?}, iterate {iterate:?})")]
    NoConvergence { block: &'static str, iterations: usize, residual: f64, residuals: Vec<f64>, iterate: Vec<f64> },

    #[error("{block}: singular Jacobian at iterate {iterate:?}")]
    SingularJacobian { block: &'static str, iterate: Vec<f64> },

    #[error(
        "circulating-current denominator vanishes at m_ref1 = {m_ref1:.6}, phi = {phi:.6} (value {denominator:.3e})"
    )]
    SingularDenominator { m_ref1: f64, phi: f64, denominator: f64 },

    #[error("arm energy not positive at t = {t:.6e} s (W = {energy:.6e} J)")]
    NegativeEnergy { t: f64, energy: f64 },

    #[error("arm power integrand has a dc term of {dc:.6e} W; I_dc is inconsistent")]
    NonzeroMeanIntegrand { dc: f64 },

    #[error("bracket [{lo}, {hi}] does not contain a sign change: {reason}")]
    Bracket { lo: f64, hi: f64, reason: String },

    #[error("scheme {0} has no analytic steady state")]
    NoAnalytic(crate::params::Scheme),

    #[error("simulation unstable at t = {t:.6e} s: {diagnostic}")]
    Unstable { t: f64, diagnostic: String },

    #[error("series not settled: {drift}")]
    NotSettled { drift: String },

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
