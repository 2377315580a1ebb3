use thiserror::Error;

/// Errors raised by the chain, estimator, freshness and policy routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("chain is not irreducible: state {state} cannot reach every other state")]
    NotIrreducible { state: usize },

    #[error("invalid rate {value} at ({from}, {to}): {reason}")]
    InvalidRate {
        from: usize,
        to: usize,
        value: f64,
        reason: &'static str,
    },

    #[error("chain is not time-reversible")]
    NotReversible,

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("adaptive quadrature did not reach tolerance {tolerance:e} (estimated error {estimate:e})")]
    QuadratureFailure { tolerance: f64, estimate: f64 },

    #[error("singular linear system: {0}")]
    SingularSystem(String),

    #[error("policy iteration did not converge after {0} iterations")]
    NoConvergence(usize),

    #[error("budget {budget} is not above the lowest admissible rate {floor}")]
    BudgetInfeasible { budget: f64, floor: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// True for errors caused by bad user input rather than numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::NotIrreducible { .. }
                | Error::InvalidRate { .. }
                | Error::NotReversible
                | Error::BudgetInfeasible { .. }
                | Error::InvalidInput(_)
        )
    }
}
