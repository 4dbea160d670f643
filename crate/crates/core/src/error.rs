use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::dma::Constraint;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{key}`: {reason}")]
    InvalidParameter { key: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("matrix is not positive semidefinite: smallest eigenvalue {min_eigenvalue:e}")]
    NotPsd { min_eigenvalue: f64 },

    #[error("matrix is not positive definite ({0})")]
    NotPositiveDefinite(&'static str),

    #[error("matrix is not Hermitian: relative asymmetry {0:e}")]
    NotHermitian(f64),

    #[error("weights infeasible under {constraint} constraint at indices {indices:?}")]
    Infeasible {
        constraint: Constraint,
        indices: Vec<usize>,
    },

    #[error("{algorithm}: objective moved the wrong way by {amount:e} at iteration {iteration}")]
    NotMonotone {
        algorithm: &'static str,
        iteration: usize,
        amount: f64,
    },

    #[error("power-constraint bisection failed: {0}")]
    Bisection(String),

    #[error("quadratic assembly does not reproduce the objective: {0}")]
    Equivalence(String),
}
