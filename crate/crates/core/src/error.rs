use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid material: Poisson ratio {nu} must lie in [0, 0.5)")]
    InvalidMaterial { nu: f64 },

    #[error("matrix is not positive definite (pivot {pivot:e} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("eigensolver did not converge after {iterations} iterations: {converged}/{wanted} pairs, worst residual {worst_residual:e}")]
    EigenNotConverged {
        iterations: usize,
        converged: usize,
        wanted: usize,
        worst_residual: f64,
    },

    #[error("GMRES hit the iteration cap ({iterations}) at relative residual {final_residual:e}")]
    GmresNotConverged {
        iterations: usize,
        final_residual: f64,
        history: Vec<f64>,
    },

    #[error("optimizer error: {0}")]
    Optimizer(String),
}
