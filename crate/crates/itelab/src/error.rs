use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("point ({x}, {y}) lies outside the domain")]
    DomainViolation { x: f64, y: f64 },

    #[error("invalid diffeomorphism: {0}")]
    InvalidDiffeomorphism(String),

    #[error("inverse map did not converge at ({x}, {y}) within {iterations} Newton steps")]
    Inversion { x: f64, y: f64, iterations: usize },

    #[error("mesh quality gate failed: minimum angle {min_angle_deg:.2} deg")]
    MeshQuality { min_angle_deg: f64 },

    #[error("numerically singular system (pivot scale {pivot:.3e}, condition estimate {cond:.3e})")]
    Singular { pivot: f64, cond: f64 },

    #[error("solve residual {residual:.3e} above tolerance {tol:.1e}")]
    Accuracy { residual: f64, tol: f64 },

    #[error("absorption sweep diverging, H-norm diffs {diffs:?}")]
    SweepDivergence { diffs: Vec<f64> },

    #[error("non-convergence: {0}")]
    NonConvergence(String),

    #[error("degenerate mode denominator at xi = {xi:?}: {condition}")]
    DegenerateMode { xi: Vec<f64>, condition: String },

    #[error("support violation: {0}")]
    Support(String),

    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Validation(msg.into()))
}
