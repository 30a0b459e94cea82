use thiserror::Error;

/// Errors surfaced by the library. The CLI maps these onto process exit
/// codes: validation -> 1, numerical/convergence -> 2, I/O -> 3.
#[derive(Debug, Error)]
pub enum BcpoError {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("fixed-point iteration did not converge: residual {residual:.3e} after {iterations} iterations")]
    NonConvergence { residual: f64, iterations: usize },

    #[error("trust region infeasible: expected KL {kl:.3e} still above radius at eta cap {eta_cap:.3e}")]
    InfeasibleTrustRegion { kl: f64, eta_cap: f64 },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, BcpoError>;

impl BcpoError {
    pub fn validation(msg: impl Into<String>) -> Self {
        BcpoError::Validation(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        BcpoError::Numerical(msg.into())
    }
}
