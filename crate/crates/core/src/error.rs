use thiserror::Error;

/// Errors raised by the laboratory.
#[derive(Debug, Error)]
pub enum MaError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("field invariant violated: {0}")]
    Field(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    /// `(g - f)_+` vanishes; callers take the `g <= f` branch.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("Newton iteration stagnated after {iterations} iterations (residual {residual:e})")]
    Convergence {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    /// The discrete normalized problem is solvable only up to a factor
    /// `e^c` on the density.
    #[error("normalized problem solvable only up to the factor e^{log_shift:e} (residual {residual:e})")]
    Incompatible { log_shift: f64, residual: f64 },

    /// A second solve from a different start disagreed with the first.
    #[error("solution not reproducible from a second initial guess (difference {difference:e})")]
    NonUnique { difference: f64 },

    #[error("positivity lost: {0}")]
    Positivity(String),

    #[error("time integration failed at t = {t}: {reason}")]
    Integration { t: f64, reason: String },

    /// The parabolic perturbation parameter is at least 1/2, so the barrier
    /// does not exist and the coarse bound applies instead.
    #[error("perturbation parameter {delta} >= 1/2; use the coarse bound")]
    CoarseBranch { delta: f64 },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, MaError>;
