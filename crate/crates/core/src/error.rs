use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("input outside domain: {what} = {value}")]
    Domain { what: &'static str, value: f64 },

    #[error("price {price} is not above intrinsic value {intrinsic}")]
    BelowIntrinsic { price: f64, intrinsic: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(&'static str),

    #[error("invalid grid: {0}")]
    InvalidGrid(&'static str),

    #[error("density ratio {ratio} below floor at T = {maturity}, k = {strike}")]
    DegenerateDenominator { maturity: f64, strike: f64, ratio: f64 },

    #[error("non-finite state at step {step} of path {path}")]
    SimulationBlowup { path: usize, step: usize },

    #[error("annuity {annuity} is not positive at x = {x}")]
    DegenerateAnnuity { x: f64, annuity: f64 },

    #[error("swap rate {target} is outside the attainable range")]
    Inversion { target: f64 },

    #[error("implied density carries mass {mass} over the integration range")]
    RangeTooSmall { mass: f64 },

    #[error("{what} did not converge after {iterations} iterations (residual {residual})")]
    NoConvergence { what: &'static str, iterations: usize, residual: f64 },
}

impl Error {
    pub(crate) fn domain(what: &'static str, value: f64) -> Self {
        Error::Domain { what, value }
    }
}

/// Rejects NaN and infinities.
pub(crate) fn finite(what: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::domain(what, value))
    }
}
