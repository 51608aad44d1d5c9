use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnsembleError {
    /// Bad user-supplied parameter (bandwidth, horizon, grid size, ...).
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Vectors or matrices whose dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A coefficient evaluated to NaN or infinity during integration.
    #[error("integration failed at t = {t}, s = {s}: {reason}")]
    Integration { t: f64, s: f64, reason: String },

    /// Step halving (or an iterative solver) ran out of budget.
    #[error("tolerance not met: {0}")]
    ToleranceNotMet(String),

    /// Decomposition failures, indefinite matrices and similar.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, EnsembleError>;

impl EnsembleError {
    pub fn param(msg: impl Into<String>) -> Self {
        EnsembleError::Parameter(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        EnsembleError::Shape(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        EnsembleError::Numerical(msg.into())
    }
}
