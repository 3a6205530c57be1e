//! Welfare aggregates and a falsification probe for Pareto optimality of
//! equilibria under separable costs.
//!
//! The probe compares alternatives with the equilibrium agent by agent, over
//! the pieces of the equilibrium partition, and only against alternatives
//! with the same non-empty communities. Finding nothing is evidence, not
//! proof.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costs::CostModel;
use crate::equilibrium::EquilibriumReport;
use crate::error::{Error, Result};
use crate::geometry::project_capped_simplex;
use crate::measure::SampledMeasure;
use crate::partition::{assign, piece_cost, NominalState, Partition};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestPositioned {
    pub sample: usize,
    pub location: Vec<f64>,
    pub distance_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunityWelfare {
    pub size: f64,
    /// Integral of assigned costs over the community.
    pub total_cost: f64,
    pub mean_cost: f64,
    pub max_cost: f64,
    /// Member with the lowest location-dependent cost.
    pub best_positioned: Option<BestPositioned>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WelfareSummary {
    pub total_cost: f64,
    pub communities: Vec<CommunityWelfare>,
}

/// Quadrature of assigned costs over the partition.
pub fn aggregate_welfare(
    model: &CostModel,
    measure: &SampledMeasure,
    state: &NominalState,
    partition: &Partition,
) -> WelfareSummary {
    let n = model.communities;
    let mut communities: Vec<CommunityWelfare> = (0..n)
        .map(|_| CommunityWelfare {
            size: 0.0,
            total_cost: 0.0,
            mean_cost: 0.0,
            max_cost: f64::NEG_INFINITY,
            best_positioned: None,
        })
        .collect();
    for piece in partition.pieces.iter().filter(|p| p.mass > 0.0) {
        let c = &mut communities[piece.community];
        let cost = piece_cost(model, measure, piece, piece.community, state);
        c.size += piece.mass;
        c.total_cost += piece.mass * cost;
        c.max_cost = c.max_cost.max(cost);
        let location = partition.piece_location(measure, piece);
        let j = measure.locate(piece.sample).0;
        let d = model.distance_part(j, piece.community, &location, state);
        if c.best_positioned.as_ref().is_none_or(|b| d < b.distance_cost) {
            c.best_positioned = Some(BestPositioned { sample: piece.sample, location, distance_cost: d });
        }
    }
    for c in &mut communities {
        if c.size > 0.0 {
            c.mean_cost = c.total_cost / c.size;
        } else {
            c.max_cost = 0.0;
        }
    }
    WelfareSummary { total_cost: communities.iter().map(|c| c.total_cost).sum(), communities }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbationKind {
    /// Perturbed nominal sizes with every agent reassigned to its best
    /// community.
    Reassignment,
    /// A band of agents near a border moved across it.
    BorderMove,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    /// Sizes realized by the alternative.
    pub sizes: Vec<f64>,
    /// Largest cost increase over all agents.
    pub worst_change: f64,
    /// Mass of agents strictly better off by more than the tolerance.
    pub improved_mass: f64,
    pub is_improvement: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoCounterexample {
    pub trial: usize,
    pub kind: PerturbationKind,
    pub assignment: Vec<usize>,
    pub comparison: Comparison,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoOutcome {
    pub trials: usize,
    /// Alternatives skipped for changing the set of non-empty communities.
    pub out_of_scope: usize,
    pub counterexample: Option<ParetoCounterexample>,
}

const WORSE_TOLERANCE: f64 = 1e-12;

/// Compares an alternative assignment of the equilibrium pieces with the
/// equilibrium itself. Costs of the alternative are evaluated at the sizes
/// it realizes.
pub fn compare_alternative(
    model: &CostModel,
    measure: &SampledMeasure,
    eq: &EquilibriumReport,
    partition: &Partition,
    assignment: &[usize],
    tolerance: f64,
) -> Result<Comparison> {
    let n = model.communities;
    let mut sizes = vec![0.0; n];
    for (piece, &h) in partition.pieces.iter().zip(assignment) {
        sizes[h] += piece.mass;
    }
    let nonempty = |s: &[f64]| (0..n).filter(|&i| s[i] > 0.0).collect::<Vec<_>>();
    let (before, after) = (nonempty(&partition.sizes), nonempty(&sizes));
    if before != after {
        return Err(Error::DifferentNonemptySet { equilibrium: before, alternative: after });
    }
    let realized = eq.state.with_sizes(sizes.clone());
    let mut worst_change = f64::NEG_INFINITY;
    let mut improved_mass = 0.0;
    for (piece, &h) in partition.pieces.iter().zip(assignment).filter(|(p, _)| p.mass > 0.0) {
        let old = piece_cost(model, measure, piece, piece.community, &eq.state);
        let new = piece_cost(model, measure, piece, h, &realized);
        worst_change = worst_change.max(new - old);
        if new < old - tolerance {
            improved_mass += piece.mass;
        }
    }
    let is_improvement = worst_change <= WORSE_TOLERANCE && improved_mass > 0.0;
    Ok(Comparison { sizes, worst_change, improved_mass, is_improvement })
}

/// Seeded search for an allocation with the same non-empty communities that
/// leaves no agent worse off and some agent better off.
///
/// Even trials perturb nominal sizes and reassign every agent optimally; odd
/// trials move a random band of agents across a border.
pub fn pareto_probe(
    model: &CostModel,
    measure: &SampledMeasure,
    eq: &EquilibriumReport,
    trials: usize,
    seed: u64,
    tolerance: f64,
) -> Result<ParetoOutcome> {
    if !model.flags().separable {
        return Err(Error::NonSeparableModel);
    }
    let partition =
        if eq.partition.pieces.is_empty() { assign(model, measure, &eq.state) } else { eq.partition.clone() };
    let n = model.communities;
    let costs: Vec<Vec<f64>> = partition
        .pieces
        .iter()
        .map(|p| (0..n).map(|h| piece_cost(model, measure, p, h, &eq.state)).collect())
        .collect();
    let results: Vec<(bool, Option<ParetoCounterexample>)> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(trial as u64);
            let (kind, assignment) = if trial % 2 == 0 || n < 2 {
                let scale = 0.2 * rng.random::<f64>();
                let m: Vec<f64> = eq.state.m.iter().map(|x| x + scale * (rng.random::<f64>() - 0.5)).collect();
                let floor = eq.state.m.iter().copied().fold(f64::INFINITY, f64::min).min(eq.state.epsilon);
                let perturbed = eq.state.with_sizes(project_capped_simplex(&m, floor));
                let assignment: Vec<usize> = partition
                    .pieces
                    .iter()
                    .map(|p| {
                        (0..n)
                            .map(|h| (h, piece_cost(model, measure, p, h, &perturbed)))
                            .min_by(|a, b| a.1.total_cmp(&b.1))
                            .map_or(p.community, |(h, _)| h)
                    })
                    .collect();
                (PerturbationKind::Reassignment, assignment)
            } else {
                let i = rng.random_range(0..n);
                let mut j = rng.random_range(0..n - 1);
                if j >= i {
                    j += 1;
                }
                let band = 0.05 * rng.random::<f64>();
                let assignment: Vec<usize> = partition
                    .pieces
                    .iter()
                    .enumerate()
                    .map(|(k, p)| if p.community == i && costs[k][j] - costs[k][i] <= band { j } else { p.community })
                    .collect();
                (PerturbationKind::BorderMove, assignment)
            };
            match compare_alternative(model, measure, eq, &partition, &assignment, tolerance) {
                Err(_) => (true, None),
                Ok(comparison) if comparison.is_improvement => {
                    (false, Some(ParetoCounterexample { trial, kind, assignment, comparison }))
                }
                Ok(_) => (false, None),
            }
        })
        .collect();
    let out_of_scope = results.iter().filter(|r| r.0).count();
    let mut counterexample = results.into_iter().find_map(|r| r.1);
    // replay before reporting
    if let Some(c) = &counterexample {
        let replay = compare_alternative(model, measure, eq, &partition, &c.assignment, tolerance);
        if !replay.is_ok_and(|r| r.is_improvement) {
            counterexample = None;
        }
    }
    Ok(ParetoOutcome { trials, out_of_scope, counterexample })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::CostTerm;
    use crate::equilibrium::{solve_basic, SolverConfig};
    use crate::measure::{build_grid_measure, Population, TypeSpace};

    fn line() -> SampledMeasure {
        build_grid_measure(&Population::single(TypeSpace::unit_cube(1)), 10_000).unwrap()
    }

    fn inst_1d() -> CostModel {
        CostModel::metric_fixed_share(vec![vec![0.0], vec![1.0]], 0.1, 1.0)
    }

    fn symmetric() -> EquilibriumReport {
        let config = SolverConfig { multistart: 1, ..Default::default() };
        solve_basic(&inst_1d(), &line(), &config).unwrap().remove(0)
    }

    #[test]
    fn symmetric_total_cost() {
        let eq = symmetric();
        let w = aggregate_welfare(&inst_1d(), &line(), &eq.state, &eq.partition);
        assert!((w.total_cost - 0.45).abs() < 1e-9, "{}", w.total_cost);
        let parts: f64 = w.communities.iter().map(|c| c.total_cost).sum();
        assert_eq!(parts, w.total_cost);
        assert!(w.communities[0].best_positioned.as_ref().unwrap().distance_cost < 1e-3);
    }

    #[test]
    fn single_community_total_cost() {
        let mu = line();
        let model = CostModel::metric_fixed_share(vec![vec![0.0]], 0.1, 1.0);
        let state = NominalState::sizes(vec![1.0], 1e-3);
        let p = assign(&model, &mu, &state);
        let w = aggregate_welfare(&model, &mu, &state, &p);
        assert!((w.total_cost - 0.6).abs() < 1e-9);
    }

    #[test]
    fn fixed_costs_only() {
        let mu = line();
        let model = CostModel::metric_fixed_share(vec![vec![0.0], vec![1.0]], 0.1, 0.0);
        let state = NominalState::sizes(vec![0.5, 0.5], 1e-3);
        let w = aggregate_welfare(&model, &mu, &state, &assign(&model, &mu, &state));
        // ties send everyone to the first community
        assert!((w.total_cost - 0.2).abs() < 1e-12);
    }

    #[test]
    fn probe_finds_no_improvement() {
        let eq = symmetric();
        let out = pareto_probe(&inst_1d(), &line(), &eq, 200, 5, 1e-6).unwrap();
        assert!(out.counterexample.is_none());
    }

    #[test]
    fn probe_refuses_spillover() {
        let eq = symmetric();
        let model = inst_1d().with_term(CostTerm::Spillover { coefficient: 0.1 });
        assert_eq!(pareto_probe(&model, &line(), &eq, 10, 0, 1e-6), Err(Error::NonSeparableModel));
    }

    #[test]
    fn one_community_alternative_is_out_of_scope() {
        let eq = symmetric();
        let all_first = vec![0; eq.partition.pieces.len()];
        let err = compare_alternative(&inst_1d(), &line(), &eq, &eq.partition, &all_first, 1e-6).unwrap_err();
        assert_eq!(err, Error::DifferentNonemptySet { equilibrium: vec![0, 1], alternative: vec![0] });
    }
}
