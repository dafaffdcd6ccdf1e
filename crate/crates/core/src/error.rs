use thiserror::Error;

use crate::expr::ExprError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("expression error in {what}: {source}")]
    Expr {
        what: String,
        #[source]
        source: ExprError,
    },
    #[error("model definition error: {0}")]
    Model(String),
    #[error("Lyapunov definition error: {0}")]
    Lyapunov(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("point {point:?} lies outside the grid region")]
    OutsideRegion { point: Vec<f64> },
    #[error("RNDD estimate does not surround the origin; no DOA can be certified ({0})")]
    Certification(String),
    #[error("controller fit failed: {0}")]
    Fit(String),
}

impl Error {
    pub(crate) fn expr(what: impl Into<String>, source: ExprError) -> Self {
        Error::Expr { what: what.into(), source }
    }
}
