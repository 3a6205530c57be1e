//! Experiment configuration: one TOML file per experiment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use tiebout::costs::CostModel;
use tiebout::equilibrium::{ProviderSpec, SolverConfig};
use tiebout::geometry::Point2;
use tiebout::measure::{build_grid_measure, build_monte_carlo_measure, Population, SampledMeasure, TypeSpace};
use tiebout::partition::{CharacteristicsSpec, LocusGrid, NominalState};
use tiebout::stability::StabilitySettings;
use tiebout::sweep::SweepPlan;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMethod {
    Grid,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureSpec {
    pub method: SamplingMethod,
    /// Cells per axis for grids, sample count for Monte Carlo.
    pub resolution: usize,
    #[serde(default)]
    pub seed: u64,
    pub types: Vec<TypeSpace>,
}

impl MeasureSpec {
    pub fn population(&self) -> Population {
        Population { types: self.types.clone() }
    }

    pub fn build(&self) -> Result<SampledMeasure, CliError> {
        let population = self.population();
        let measure = match self.method {
            SamplingMethod::Grid => build_grid_measure(&population, self.resolution)?,
            SamplingMethod::MonteCarlo => build_monte_carlo_measure(&population, self.resolution, self.seed)?,
        };
        Ok(measure)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WelfareSettings {
    pub pareto_trials: usize,
    pub seed: u64,
    /// Cost increase below which an agent does not count as worse off.
    pub tolerance: f64,
}

impl Default for WelfareSettings {
    fn default() -> Self {
        Self { pareto_trials: 200, seed: 0, tolerance: 1e-12 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocusSpec {
    pub centers: [Point2; 2],
    pub delta_p: Vec<f64>,
    #[serde(default = "unit_lower")]
    pub lower: Point2,
    #[serde(default = "unit_upper")]
    pub upper: Point2,
    #[serde(default = "locus_resolution")]
    pub resolution: usize,
}

fn unit_lower() -> Point2 {
    [0.0, 0.0]
}

fn unit_upper() -> Point2 {
    [1.0, 1.0]
}

fn locus_resolution() -> usize {
    200
}

impl LocusSpec {
    pub fn grid(&self) -> LocusGrid {
        LocusGrid { lower: self.lower, upper: self.upper, resolution: self.resolution }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PlotSettings {
    pub locus: Option<LocusSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSettings {
    pub dir: PathBuf,
}

impl Default for OutputSettings {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub measure: MeasureSpec,
    pub costs: CostModel,
    #[serde(default)]
    pub characteristics: CharacteristicsSpec,
    #[serde(default)]
    pub providers: Option<ProviderSpec>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub stability: StabilitySettings,
    #[serde(default)]
    pub welfare: WelfareSettings,
    #[serde(default)]
    pub sweep: Option<SweepPlan>,
    #[serde(default)]
    pub plot: PlotSettings,
    #[serde(default)]
    pub output: OutputSettings,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Basic,
    Extended,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_owned(), source })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Schema(e.to_string()))
    }

    pub fn mode(&self) -> Mode {
        let flags = self.costs.flags();
        let coupled = flags.depends_on_characteristics || flags.depends_on_provider_params;
        if coupled || self.providers.is_some() {
            Mode::Extended
        } else {
            Mode::Basic
        }
    }

    /// Cross-reference checks; never samples the measure.
    pub fn validate(&self) -> Result<(), CliError> {
        let population = self.measure.population();
        population.validate()?;
        if self.measure.resolution == 0 {
            return Err(CliError::Invalid("measure resolution must be positive".into()));
        }
        let dims: Vec<usize> = self.measure.types.iter().map(TypeSpace::dimension).collect();
        self.costs.validate(&dims)?;
        let n = self.costs.communities;
        self.solver.validate(n)?;
        if !self.characteristics.communities.is_empty() && self.characteristics.communities.len() != n {
            return Err(CliError::Invalid(format!(
                "characteristics list {} communities, costs have {n}",
                self.characteristics.communities.len()
            )));
        }
        let flags = self.costs.flags();
        match &self.providers {
            Some(p) => p.validate(n, &self.characteristic_counts())?,
            None if flags.depends_on_provider_params => {
                return Err(CliError::Invalid("costs depend on provider parameters but [providers] is missing".into()))
            }
            None => {}
        }
        if let Some(plan) = &self.sweep {
            plan.validate()?;
        }
        let s = &self.stability;
        if !(s.epsilon_ball > 0.0 && s.epsilon_mass > 0.0 && s.border_resolution >= 2) {
            return Err(CliError::Invalid("stability radii must be positive and border_resolution >= 2".into()));
        }
        if let Some(locus) = &self.plot.locus {
            if locus.resolution < 2 || locus.lower.iter().zip(&locus.upper).any(|(l, u)| !(l < u)) {
                return Err(CliError::Invalid("locus grid needs resolution >= 2 and a non-empty box".into()));
            }
        }
        Ok(())
    }

    pub fn characteristic_counts(&self) -> Vec<usize> {
        let q = self.measure.types.len();
        (0..self.costs.communities).map(|i| self.characteristics.resolved(i, q).len()).collect()
    }

    /// Barycentric state with zero characteristics and initial provider
    /// parameters; used for diagnostics before any solve.
    pub fn template_state(&self) -> NominalState {
        let n = self.costs.communities;
        let mut state = NominalState::barycenter(n, self.solver.epsilon_min);
        state.v = self.characteristic_counts().into_iter().map(|c| vec![0.0; c]).collect();
        if let Some(p) = &self.providers {
            state.z = p.providers.iter().map(|p| p.initial_parameters()).collect();
        }
        state
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINE: &str = r#"
[measure]
method = "grid"
resolution = 100
types = [{ lower = [0.0], upper = [1.0] }]

[costs]
communities = 2
terms = [
  { kind = "metric", centers = [[0.0], [1.0]] },
  { kind = "fixed-share", g = 0.1 },
]
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = ExperimentConfig::parse(LINE).unwrap();
        c.validate().unwrap();
        assert_eq!(c.mode(), Mode::Basic);
        assert_eq!(c.solver.multistart, 20);
        assert_eq!(c.measure.build().unwrap().len(), 100);
    }

    #[test]
    fn unknown_section_is_a_schema_error() {
        let text = format!("{LINE}\n[bogus]\nx = 1\n");
        assert!(matches!(ExperimentConfig::parse(&text), Err(CliError::Schema(_))));
    }

    #[test]
    fn dimension_mismatch_is_invalid() {
        let text = LINE.replace("[[0.0], [1.0]]", "[[0.0, 0.0], [1.0, 0.0]]");
        let c = ExperimentConfig::parse(&text).unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn provider_costs_need_providers() {
        let text = LINE.replace(r#"{ kind = "metric", centers = [[0.0], [1.0]] }"#, r#"{ kind = "provider-metric" }"#);
        let c = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(c.mode(), Mode::Extended);
        assert!(c.validate().is_err());
    }
}
