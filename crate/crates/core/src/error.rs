use thiserror::Error;

pub type Result<T> = std::result::Result<T, LcsError>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LcsError {
    #[error("manifold must have positive dimension")]
    ZeroDimension,

    #[error("{op} undefined at argument {arg}{}", fmt_point(.point))]
    Domain { op: &'static str, arg: f64, point: Option<Vec<f64>> },

    #[error("derivatives of order {needed} requested but only {available} available")]
    InsufficientOrder { needed: u8, available: u8 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("degree error: {0}")]
    Degree(String),

    #[error("Lee form not closed: |dβ| = {residual:e} at {point:?}")]
    NotClosed { point: Vec<f64>, residual: f64 },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("rejected: {0}")]
    Rejected(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

fn fmt_point(p: &Option<Vec<f64>>) -> String {
    match p {
        Some(p) => format!(" at point {p:?}"),
        None => String::new(),
    }
}

impl LcsError {
    pub fn domain(op: &'static str, arg: f64) -> Self {
        LcsError::Domain { op, arg, point: None }
    }

    /// Attaches the evaluation point to a domain error.
    pub fn at_point(self, x: &[f64]) -> Self {
        match self {
            LcsError::Domain { op, arg, point: None } => LcsError::Domain { op, arg, point: Some(x.to_vec()) },
            other => other,
        }
    }
}
