use alloc::string::String;

/// Errors raised by the analysis, optimization and simulation routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// An argument is outside the domain of a function.
    #[error("domain error in {function}: {detail}")]
    Domain {
        function: &'static str,
        detail: String,
    },

    /// Adaptive quadrature ran out of subintervals before meeting its tolerance.
    #[error("quadrature did not converge: estimate {estimate:e}, error bound {error:e} after {intervals} intervals")]
    Convergence {
        estimate: f64,
        error: f64,
        intervals: usize,
    },

    /// Probability grids with incompatible layout, or a grid that is too coarse.
    #[error("grid error: {0}")]
    Grid(String),

    /// A policy, spec or configuration violates one of its invariants.
    #[error("invalid {field}: {detail}")]
    Invalid {
        field: &'static str,
        detail: String,
    },

    /// A quantity that must be a probability left [0, 1].
    #[error("{quantity} = {value:e} is not a probability")]
    ProbabilityOutOfRange { quantity: &'static str, value: f64 },

    /// A stage whose occurrence probability is zero was asked for a conditional quantity.
    #[error("round {round} is unreachable (occurrence probability 0)")]
    DegenerateState { round: usize },

    /// No admissible decision meets the outage constraint.
    #[error("infeasible: minimum achievable outage {min_outage:e} exceeds epsilon {epsilon:e}")]
    Infeasible { min_outage: f64, epsilon: f64 },

    /// The per-round unit bounds admit no allocation within the unit budget.
    #[error("no rate allocation: {rounds} rounds of at least {min_units} units exceed {units_total} units")]
    EmptyGrid {
        rounds: usize,
        min_units: usize,
        units_total: usize,
    },

    /// Infeasibility raised inside an outer iteration of the alternating optimizer.
    #[error("alternating optimization failed at iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: alloc::boxed::Box<Error>,
    },

    /// The exhaustive oracle refused an instance with too many candidates.
    #[error("search space of {candidates} candidates exceeds the limit of {limit}")]
    TooLarge { candidates: u64, limit: u64 },
}

impl Error {
    pub(crate) fn domain(function: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            function,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(field: &'static str, detail: impl Into<String>) -> Self {
        Error::Invalid {
            field,
            detail: detail.into(),
        }
    }

    /// True for errors that mean "no feasible solution" rather than bad input.
    pub fn is_infeasible(&self) -> bool {
        match self {
            Error::Infeasible { .. } | Error::EmptyGrid { .. } => true,
            Error::AtIteration { source, .. } => source.is_infeasible(),
            _ => false,
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;

/// Fails unless `value` lies in [0, 1] up to `1e-12` of rounding slack.
pub(crate) fn check_probability(quantity: &'static str, value: f64) -> Result<f64> {
    const SLACK: f64 = 1e-12;
    if value.is_finite() && (-SLACK..=1.0 + SLACK).contains(&value) {
        Ok(value.clamp(0.0, 1.0))
    } else {
        Err(Error::ProbabilityOutOfRange { quantity, value })
    }
}
