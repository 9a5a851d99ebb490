use thiserror::Error;

/// Errors raised by tree construction, valuation and the numerical solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid tree: {0}")]
    InvalidTree(String),

    #[error("unknown node `{0}`")]
    UnknownNode(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    /// An argument fell outside the domain of a utility or dual function.
    #[error("domain error: {0}")]
    Domain(String),

    /// Iteration budget exhausted. Carries the best iterate found.
    #[error("no convergence after {iterations} iterations (residual {residual:e}, best value {best_value})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        best_value: f64,
        best_point: Vec<f64>,
    },

    /// The objective is unbounded above along `direction`.
    #[error("unbounded optimum: iterates left the bound {bound:e}")]
    Unbounded { bound: f64, direction: Vec<f64> },

    /// Arbitrage in the sense of a non-positive state price.
    #[error("arbitrage: {0}")]
    Arbitrage(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
