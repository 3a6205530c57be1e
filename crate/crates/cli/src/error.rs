use std::path::PathBuf;

use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NO_CONVERGENCE: i32 = 3;
pub const EXIT_ASSUMPTION: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot access {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("config does not match the schema: {0}")]
    Schema(String),

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Core(#[from] tiebout::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use tiebout::Error as E;
        match self {
            CliError::Io { .. } | CliError::Schema(_) | CliError::Invalid(_) => EXIT_VALIDATION,
            CliError::Core(e) => match e {
                E::NoConvergence { .. } | E::CyclingDetected { .. } | E::NoFullyLabeledCell { .. } => {
                    EXIT_NO_CONVERGENCE
                }
                E::SmallGroupUnverified(_)
                | E::AssumptionViolated { .. }
                | E::SingularPoint { .. }
                | E::EmptyBorder { .. }
                | E::DegenerateGradient { .. }
                | E::NonSeparableModel
                | E::DifferentNonemptySet { .. }
                | E::EmptyCommunityMean { .. } => EXIT_ASSUMPTION,
                E::Invalid(_)
                | E::SupportEmpty { .. }
                | E::RejectionRateExceeded { .. }
                | E::ZeroSizeCommunity { .. }
                | E::UnsupportedDimension(_)
                | E::EmptyFeasibleSet { .. } => EXIT_VALIDATION,
            },
        }
    }

    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        use tiebout::Error as E;
        match self {
            CliError::Io { .. } => "io",
            CliError::Schema(_) => "schema",
            CliError::Invalid(_) => "invalid-config",
            CliError::Core(e) => match e {
                E::Invalid(_) => "invalid-input",
                E::SupportEmpty { .. } => "support-empty",
                E::RejectionRateExceeded { .. } => "rejection-rate-exceeded",
                E::ZeroSizeCommunity { .. } => "zero-size-community",
                E::SingularPoint { .. } => "singular-point",
                E::AssumptionViolated { .. } => "small-group-ineffectiveness-violated",
                E::EmptyCommunityMean { .. } => "empty-community-mean",
                E::EmptyBorder { .. } => "empty-border",
                E::DegenerateGradient { .. } => "degenerate-gradient",
                E::UnsupportedDimension(_) => "unsupported-dimension",
                E::NoConvergence { .. } => "no-convergence",
                E::SmallGroupUnverified(_) => "small-group-floor-unverified",
                E::NoFullyLabeledCell { .. } => "no-fully-labeled-cell",
                E::EmptyFeasibleSet { .. } => "empty-feasible-set",
                E::CyclingDetected { .. } => "cycling-detected",
                E::NonSeparableModel => "non-separable-model",
                E::DifferentNonemptySet { .. } => "different-nonempty-set",
            },
        }
    }

    /// Structured payload for errors that carry data worth keeping.
    pub fn details(&self) -> Option<serde_json::Value> {
        use serde_json::json;
        use tiebout::Error as E;
        match self {
            CliError::Core(E::CyclingDetected { period, residual, cycle }) => {
                Some(json!({ "period": period, "residual": residual, "cycle": cycle }))
            }
            CliError::Core(E::NoConvergence { iterations, best_residual }) => {
                Some(json!({ "iterations": iterations, "best_residual": best_residual }))
            }
            CliError::Core(E::DifferentNonemptySet { equilibrium, alternative }) => {
                Some(json!({ "equilibrium": equilibrium, "alternative": alternative }))
            }
            _ => None,
        }
    }
}
