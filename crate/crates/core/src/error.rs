//! Error taxonomy for the solver pipeline. Variants are grouped by where
//! they surface: argument validation, model validation, numerical failure,
//! and the multiplier search.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolverError {
    /// A caller-supplied argument violates a precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A market model fails a structural requirement (singular volatility,
    /// negative spread, non-finite driver output, failed hard validation).
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// Regression design matrix too close to singular at a time step.
    #[error("ill-conditioned regression basis at step {step}: condition number {cond:.3e} exceeds {limit:.3e}")]
    IllConditionedBasis { step: usize, cond: f64, limit: f64 },

    /// Non-finite values appeared mid-recursion.
    #[error("numerical blow-up: {0}")]
    NumericalBlowup(String),

    /// Variational machinery requires a differentiable driver.
    #[error("operation requires a smooth driver: {0}")]
    UnsupportedNonSmooth(String),

    /// The coupled forward-backward iteration exhausted its budget.
    #[error("fixed-point iteration did not converge: metric {metric:.3e} after {iterations} iterations (tol {tol:.3e})")]
    NonConvergence {
        iterations: usize,
        metric: f64,
        tol: f64,
    },

    /// A root bracket could not be established for a multiplier search.
    #[error("bracket failure: {0}")]
    BracketFailure(String),

    /// The budget lies below the minimal investment needed for the mean
    /// target, so no admissible plan exists.
    #[error("infeasible problem: initial wealth {initial_wealth:.6e} is below the minimal investment {minimal_investment:.6e} required for the mean target")]
    Infeasible {
        minimal_investment: f64,
        initial_wealth: f64,
    },
}

pub type Result<T> = std::result::Result<T, SolverError>;

impl SolverError {
    pub fn invalid_argument(msg: impl Into<String>) -> Self {
        SolverError::InvalidArgument(msg.into())
    }

    pub fn invalid_model(msg: impl Into<String>) -> Self {
        SolverError::InvalidModel(msg.into())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn messages_carry_payloads() {
        let e = SolverError::IllConditionedBasis {
            step: 17,
            cond: 3.0e13,
            limit: 1.0e12,
        };
        let msg = e.to_string();
        assert!(msg.contains("step 17"));
        assert!(msg.contains("3.000e13"));
    }
}
