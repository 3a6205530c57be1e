//! Nested iteration for the extended model.
//!
//! The inner loop alternates a size solve with a characteristic update at
//! fixed provider parameters. The outer loop lets every provider best
//! respond in turn (Gauss-Seidel) and stops when parameters settle.

use rayon::prelude::*;

use super::sizes::solve_sizes;
use super::{
    build_report, merge_duplicates, provider_best_response, start_points, sup_distance, EquilibriumReport,
    ExtendedContext, ProviderSpec, SolverConfig,
};
use crate::costs::CostModel;
use crate::error::{Error, Result};
use crate::geometry::project_capped_simplex;
use crate::measure::SampledMeasure;
use crate::partition::{assign, realized_characteristics, CharacteristicsSpec, NominalState};

const INNER_ROUNDS: usize = 50;
const MAX_PERIOD: usize = 8;

enum Outcome {
    Converged { state: NominalState, iterations: usize },
    Cycle { period: usize, residual: f64, cycle: Vec<Vec<f64>> },
    Failed { residual: f64 },
}

fn flatten(state: &NominalState) -> Vec<f64> {
    state.m.iter().chain(state.v.iter().flatten()).chain(state.z.iter().flatten()).copied().collect()
}

struct Problem<'a> {
    model: &'a CostModel,
    measure: &'a SampledMeasure,
    spec: &'a CharacteristicsSpec,
    providers: &'a ProviderSpec,
    config: &'a SolverConfig,
}

impl Problem<'_> {
    /// Sizes and characteristics at fixed parameters; returns the size and
    /// characteristic residuals.
    fn inner(&self, state: &mut NominalState) -> Result<(f64, f64)> {
        let coupled = self.model.flags().depends_on_characteristics;
        let alpha = if coupled { self.config.damping } else { 1.0 };
        let mut size_residual = f64::INFINITY;
        let mut char_residual = f64::INFINITY;
        for _ in 0..INNER_ROUNDS {
            let run = solve_sizes(self.model, self.measure, state, &state.m.clone(), self.config);
            state.m = run.m;
            size_residual = run.residual;
            let partition = assign(self.model, self.measure, state);
            let v = realized_characteristics(self.measure, &partition, self.spec, state)?;
            char_residual = state.v.iter().zip(&v).map(|(a, b)| sup_distance(a, b)).fold(0.0, f64::max);
            for (old, new) in state.v.iter_mut().zip(&v) {
                for (o, n) in old.iter_mut().zip(new) {
                    *o += alpha * (n - *o);
                }
            }
            if !coupled || (char_residual <= 1e-3 * self.config.tolerance && run.converged) {
                if !coupled {
                    char_residual = 0.0;
                }
                break;
            }
        }
        Ok((size_residual, char_residual))
    }

    fn run(&self, m0: &[f64], z0: &[Vec<f64>], counts: &[usize]) -> Result<Outcome> {
        let config = self.config;
        let n = m0.len();
        let mut state = NominalState {
            m: project_capped_simplex(m0, config.epsilon_floor),
            v: counts.iter().map(|&c| vec![0.0; c]).collect(),
            z: z0.to_vec(),
            epsilon: config.epsilon_min,
        };
        let mut history: Vec<Vec<f64>> = Vec::new();
        let mut residual = f64::INFINITY;
        for outer in 0..config.max_iterations {
            let (size_res, char_res) = self.inner(&mut state)?;
            let mut dz: f64 = 0.0;
            for i in 0..n {
                let z = provider_best_response(self.providers, i, &state, &config.provider)?;
                dz = dz.max(sup_distance(&z, &state.z[i]));
                state.z[i] = z;
            }
            residual = size_res.max(char_res).max(dz);
            if dz <= 0.1 * config.tolerance && size_res <= config.tolerance && char_res <= config.tolerance {
                self.inner(&mut state)?;
                return Ok(Outcome::Converged { state, iterations: outer + 1 });
            }
            let current = flatten(&state);
            for period in 2..=MAX_PERIOD.min(history.len()) {
                let earlier = &history[history.len() - period];
                let moving =
                    history[history.len() - period..].windows(2).any(|w| sup_distance(&w[0], &w[1]) > config.tolerance);
                if moving && sup_distance(earlier, &current) <= config.tolerance {
                    let mut cycle = history[history.len() - period..].to_vec();
                    cycle.push(current);
                    return Ok(Outcome::Cycle { period, residual, cycle });
                }
            }
            history.push(current);
        }
        Ok(Outcome::Failed { residual })
    }
}

/// Equilibria of the extended model from multistart sizes and the
/// providers' initial parameters.
///
/// A start whose outer loop revisits an earlier state without converging
/// aborts the solve with [`Error::CyclingDetected`], carrying the cycle.
pub fn solve_extended(
    model: &CostModel,
    spec: &CharacteristicsSpec,
    providers: &ProviderSpec,
    measure: &SampledMeasure,
    config: &SolverConfig,
) -> Result<Vec<EquilibriumReport>> {
    let n = model.communities;
    config.validate(n)?;
    let q = measure.type_count();
    let counts: Vec<usize> = (0..n).map(|i| spec.resolved(i, q).len()).collect();
    providers.validate(n, &counts)?;
    let z0: Vec<Vec<f64>> = providers.providers.iter().map(|p| p.initial_parameters()).collect();
    let problem = Problem { model, measure, spec, providers, config };
    let starts = start_points(n, config.multistart, config.seed);
    let outcomes: Vec<Result<Outcome>> = starts.par_iter().map(|m0| problem.run(m0, &z0, &counts)).collect();
    let context = ExtendedContext { characteristics: spec, providers };
    let mut reports = Vec::new();
    let mut best_residual = f64::INFINITY;
    let mut first_error = None;
    for (start_index, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(Outcome::Converged { state, iterations }) => {
                if !config.allow_empty && state.m.iter().any(|&x| x <= config.epsilon_min) {
                    continue;
                }
                let report = build_report(model, measure, state, iterations, start_index, Some(context), config);
                best_residual = best_residual.min(report.residuals.max());
                reports.push(report);
            }
            Ok(Outcome::Cycle { period, residual, cycle }) => {
                return Err(Error::CyclingDetected { period, residual, cycle });
            }
            Ok(Outcome::Failed { residual }) => best_residual = best_residual.min(residual),
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    if reports.is_empty() {
        return Err(first_error.unwrap_or(Error::NoConvergence { iterations: config.max_iterations, best_residual }));
    }
    Ok(merge_duplicates(reports, 10.0 * config.tolerance))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::{CostTerm, PerCommunity};
    use crate::equilibrium::{FeasibleBox, Provider, UtilityTerm};
    use crate::measure::{build_grid_measure, Population, TypeSpace};
    use crate::partition::{CharacteristicDef, Integrand};

    fn centroid_spec(n: usize) -> CharacteristicsSpec {
        CharacteristicsSpec::shared(
            n,
            vec![
                CharacteristicDef::mean(Integrand::Coordinate { axis: 0 }),
                CharacteristicDef::mean(Integrand::Coordinate { axis: 1 }),
            ],
        )
    }

    fn lloyd_providers(initial: Vec<Vec<f64>>) -> ProviderSpec {
        ProviderSpec {
            providers: initial
                .into_iter()
                .map(|z| Provider {
                    utility: vec![UtilityTerm::TrackCharacteristic {
                        offset: 0,
                        characteristics: vec![0, 1],
                        weight: 1.0,
                    }],
                    feasible: FeasibleBox::unit(2),
                    initial: Some(z),
                })
                .collect(),
        }
    }

    fn lloyd_model(n: usize, g: f64) -> CostModel {
        CostModel {
            communities: n,
            terms: vec![
                CostTerm::ProviderMetric { offset: 0, p: 2.0, scale: 1.0 }.into(),
                CostTerm::FixedShare { g: PerCommunity::Uniform(g) }.into(),
            ],
            gradient: Default::default(),
        }
    }

    #[test]
    fn single_provider_sits_at_centroid() {
        let mu = build_grid_measure(&Population::single(TypeSpace::unit_cube(2)), 40).unwrap();
        let config = SolverConfig { multistart: 1, ..Default::default() };
        let reports = solve_extended(
            &lloyd_model(1, 0.05),
            &centroid_spec(1),
            &lloyd_providers(vec![vec![0.1, 0.9]]),
            &mu,
            &config,
        )
        .unwrap();
        assert_eq!(reports.len(), 1);
        let z = &reports[0].state.z[0];
        assert!((z[0] - 0.5).abs() < 1e-9 && (z[1] - 0.5).abs() < 1e-9, "{z:?}");
        assert_eq!(reports[0].state.m, vec![1.0]);
    }

    #[test]
    fn lloyd_pair_converges_to_half_squares() {
        let mu = build_grid_measure(&Population::single(TypeSpace::unit_cube(2)), 60).unwrap();
        let config = SolverConfig { multistart: 1, max_iterations: 400, ..Default::default() };
        let providers = lloyd_providers(vec![vec![0.3, 0.4], vec![0.7, 0.6]]);
        let reports = solve_extended(&lloyd_model(2, 0.05), &centroid_spec(2), &providers, &mu, &config).unwrap();
        let r = &reports[0];
        assert!((r.state.z[0][0] - 0.25).abs() < 1e-3 && (r.state.z[0][1] - 0.5).abs() < 1e-3, "{:?}", r.state);
        assert!((r.state.z[1][0] - 0.75).abs() < 1e-3 && (r.state.z[1][1] - 0.5).abs() < 1e-3);
        assert!((r.state.m[0] - 0.5).abs() < 1e-3);
        assert!(r.residuals.provider_max_regret <= 1e-6, "{:?}", r.residuals);
    }
}
