use rayon::prelude::*;

use super::sizes::{solve_sizes, SizeRun};
use super::{build_report, merge_duplicates, start_points, EquilibriumReport, SolverConfig};
use crate::costs::{small_group_floor, sup_inf_cost, CostModel};
use crate::error::{Error, Result};
use crate::measure::SampledMeasure;
use crate::partition::{assign, NominalState};

/// Cost bound used to check small-group ineffectiveness: twice the largest
/// cost an optimizing agent can face.
pub fn floor_bound(model: &CostModel, measure: &SampledMeasure, template: &NominalState) -> f64 {
    let attainable = sup_inf_cost(model, measure, template);
    if attainable > 0.0 {
        2.0 * attainable
    } else {
        attainable + 1.0
    }
}

/// Multistart search for the fixed points of the size map with all
/// communities non-empty.
///
/// Fixed points closer than `10 tau` are merged, keeping the lowest start
/// index. The result is a heuristic enumeration: distinct starts that all
/// converge to the same points leave others undiscovered.
pub fn solve_basic(
    model: &CostModel,
    measure: &SampledMeasure,
    config: &SolverConfig,
) -> Result<Vec<EquilibriumReport>> {
    let starts = start_points(model.communities, config.multistart, config.seed);
    solve_with_starts(model, measure, config, &starts)
}

/// Continuation from a single starting size vector.
pub fn solve_from(
    model: &CostModel,
    measure: &SampledMeasure,
    config: &SolverConfig,
    start: &[f64],
) -> Result<Vec<EquilibriumReport>> {
    if start.len() != model.communities {
        return Err(Error::Invalid(format!("start has {} sizes, model has {}", start.len(), model.communities)));
    }
    solve_with_starts(model, measure, config, &[start.to_vec()])
}

fn solve_with_starts(
    model: &CostModel,
    measure: &SampledMeasure,
    config: &SolverConfig,
    starts: &[Vec<f64>],
) -> Result<Vec<EquilibriumReport>> {
    let n = model.communities;
    config.validate(n)?;
    let flags = model.flags();
    if flags.depends_on_characteristics || flags.depends_on_provider_params {
        return Err(Error::Invalid(
            "basic solver requires costs independent of characteristics and provider parameters".into(),
        ));
    }
    let template = NominalState::barycenter(n, config.epsilon_min);
    if n > 1 {
        let bound = floor_bound(model, measure, &template);
        small_group_floor(model, measure, bound, &template).map_err(|e| Error::SmallGroupUnverified(e.to_string()))?;
    }
    let runs: Vec<SizeRun> = starts.par_iter().map(|m0| solve_sizes(model, measure, &template, m0, config)).collect();
    let best_residual = runs.iter().map(|r| r.residual).fold(f64::INFINITY, f64::min);
    let mut reports = Vec::new();
    for (start_index, run) in runs.into_iter().enumerate() {
        let accept = run.converged || (config.allow_empty && empty_fixed_point(&run, config));
        if !accept {
            continue;
        }
        let mut m = run.m;
        if !run.converged {
            // snap the starved communities to zero
            let state = template.with_sizes(m.clone());
            m = assign(model, measure, &state).sizes;
        }
        reports.push(build_report(model, measure, template.with_sizes(m), run.iterations, start_index, None, config));
    }
    if reports.is_empty() {
        return Err(Error::NoConvergence { iterations: config.max_iterations, best_residual });
    }
    Ok(merge_duplicates(reports, 10.0 * config.tolerance))
}

/// A run stuck on the floor whose starved communities attract nobody.
fn empty_fixed_point(run: &SizeRun, config: &SolverConfig) -> bool {
    run.m.iter().any(|&x| x <= config.epsilon_min * (1.0 + 1e-9)) && run.residual <= config.epsilon_min * (1.0 + 1e-6)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{build_grid_measure, Population, TypeSpace};

    fn line() -> SampledMeasure {
        build_grid_measure(&Population::single(TypeSpace::unit_cube(1)), 10_000).unwrap()
    }

    fn inst_1d(g: f64) -> CostModel {
        CostModel::metric_fixed_share(vec![vec![0.0], vec![1.0]], g, 1.0)
    }

    #[test]
    fn recovers_analytic_set() {
        let reports = solve_basic(&inst_1d(0.1), &line(), &SolverConfig::default()).unwrap();
        let root = (1.0 - 0.6f64.sqrt()) / 2.0;
        let expected = [root, 0.5, 1.0 - root];
        let mut found: Vec<f64> = reports.iter().map(|r| r.state.m[0]).collect();
        found.sort_by(f64::total_cmp);
        assert_eq!(found.len(), 3, "{found:?}");
        for (f, e) in found.iter().zip(expected) {
            assert!((f - e).abs() < 1e-6, "{found:?}");
        }
        for r in &reports {
            assert!(r.all_nonempty);
            assert!(r.residuals.size_residual <= 1e-6);
            assert!(r.residuals.agent_max_regret <= 1e-6, "{:?}", r.residuals);
        }
    }

    #[test]
    fn large_fixed_cost_leaves_only_symmetric() {
        let reports = solve_basic(&inst_1d(0.3), &line(), &SolverConfig::default()).unwrap();
        assert_eq!(reports.len(), 1);
        assert!((reports[0].state.m[0] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn zero_fixed_cost_is_rejected() {
        let err = solve_basic(&inst_1d(0.0), &line(), &SolverConfig::default()).unwrap_err();
        assert!(matches!(err, Error::SmallGroupUnverified(_)));
    }
}
