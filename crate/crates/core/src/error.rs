use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("species record `{record}`: missing field `{field}`")]
    MissingField { record: String, field: &'static str },

    #[error("`{field}` must be positive, got {value}")]
    NonPositive { field: &'static str, value: f64 },

    #[error("`{field}`: {reason}")]
    InvalidValue { field: String, reason: String },

    #[error("unknown species `{0}`")]
    UnknownSpecies(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("non-finite input `{0}`")]
    NonFinite(&'static str),

    #[error("|v| = {0} m/s exceeds the non-relativistic guard c/100")]
    Relativistic(f64),

    #[error("steady state is not unique or ill-conditioned (condition estimate {condition:.3e})")]
    SingularSystem { condition: f64 },

    #[error(
        "derivative at p = 0 did not converge: successive estimates {coarse:.6e} and {fine:.6e}"
    )]
    DerivativeNotConverged { coarse: f64, fine: f64 },

    #[error(
        "Gauss-Hermite quadrature did not converge at order {order} (relative change {change:.3e})"
    )]
    QuadratureNotConverged { order: usize, change: f64 },

    #[error("time integration failed at t = {t:.6e} s: {reason}")]
    Integration { t: f64, reason: String },

    #[error("operation requires a cooling configuration (alpha = {alpha:.6e} 1/s)")]
    NotCooling { alpha: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
