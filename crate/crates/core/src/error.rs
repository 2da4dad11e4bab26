use thiserror::Error;

use crate::star_graph::Violation;

/// Errors raised by the discretization, solvers and control synthesis.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid star graph configuration: {}", format_violations(.0))]
    InvalidConfig(Vec<Violation>),

    #[error("parameter out of domain: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("time grid mismatch: {0}")]
    GridMismatch(String),

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NotConverged {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(&'static str),

    #[error("singular linear system: {0}")]
    Singular(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
