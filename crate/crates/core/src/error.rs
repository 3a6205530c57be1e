use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("support of type {type_index} contains no sample cell")]
    SupportEmpty { type_index: usize },

    #[error("rejection sampling acceptance {rate:.2e} below 1e-4 for type {type_index}")]
    RejectionRateExceeded { type_index: usize, rate: f64 },

    #[error("community {community} has zero nominal size")]
    ZeroSizeCommunity { community: usize },

    #[error("gradient requested at a non-differentiable point of community {community}")]
    SingularPoint { community: usize },

    #[error("small-group ineffectiveness fails for community {community}: {reason}")]
    AssumptionViolated { community: usize, reason: String },

    #[error("mean characteristic requested for empty community {community}")]
    EmptyCommunityMean { community: usize },

    #[error("communities {i} and {j} share no border")]
    EmptyBorder { i: usize, j: usize },

    #[error("gradient gap {gap:.3e} below tolerance on border ({i},{j})")]
    DegenerateGradient { i: usize, j: usize, gap: f64 },

    #[error("operation requires type-space dimension <= 2 (got {0})")]
    UnsupportedDimension(usize),

    #[error("no start converged within {iterations} iterations (best residual {best_residual:.3e})")]
    NoConvergence { iterations: usize, best_residual: f64 },

    #[error("small-group floor could not be verified: {0}")]
    SmallGroupUnverified(String),

    #[error("no fully labeled cell at depth {depth}")]
    NoFullyLabeledCell { depth: usize },

    #[error("provider {provider} has an empty feasible set")]
    EmptyFeasibleSet { provider: usize },

    #[error("outer provider loop cycles with period {period} (residual {residual:.3e})")]
    CyclingDetected { period: usize, residual: f64, cycle: Vec<Vec<f64>> },

    #[error("model is not separable; Pareto comparison requires separable costs")]
    NonSeparableModel,

    #[error("alternative has non-empty communities {alternative:?}, equilibrium has {equilibrium:?}")]
    DifferentNonemptySet { equilibrium: Vec<usize>, alternative: Vec<usize> },
}
