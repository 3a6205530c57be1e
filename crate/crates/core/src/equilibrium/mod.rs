//! Equilibria: fixed points of the size map, jointly with characteristics
//! and provider best responses in the extended model.

mod basic;
mod extended;
mod kkm;
mod provider;
mod sizes;

pub use basic::{floor_bound, solve_basic, solve_from};
pub use extended::solve_extended;
pub use kkm::{kkm_oracle, KkmCell};
pub use provider::{provider_best_response, provider_regret, FeasibleBox, Provider, ProviderSpec, UtilityTerm};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::costs::CostModel;
use crate::error::{Error, Result};
use crate::measure::SampledMeasure;
use crate::partition::{assign, piece_cost, realized_characteristics, CharacteristicsSpec, NominalState, Partition};
use crate::stability::StabilityVerdict;
use crate::welfare::WelfareSummary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderSettings {
    /// Golden-section stopping width and sweep improvement threshold.
    pub line_search_tolerance: f64,
    pub max_sweeps: usize,
    /// Grid points per axis of the regret probe.
    pub probe_points: usize,
}

impl Default for ProviderSettings {
    fn default() -> Self {
        Self { line_search_tolerance: 1e-10, max_sweeps: 100, probe_points: 41 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Initial floor of the restricted simplex.
    pub epsilon_floor: f64,
    /// Final floor after annealing.
    pub epsilon_min: f64,
    /// Multiplicative factor of the floor schedule.
    pub epsilon_anneal: f64,
    pub damping: f64,
    pub tolerance: f64,
    /// Iteration budget per start (size iterations; outer iterations in the
    /// extended model).
    pub max_iterations: usize,
    pub multistart: usize,
    pub seed: u64,
    /// Keep fixed points with empty communities.
    pub allow_empty: bool,
    pub provider: ProviderSettings,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            epsilon_floor: 0.01,
            epsilon_min: 1e-3,
            epsilon_anneal: 0.5,
            damping: 0.5,
            tolerance: 1e-6,
            max_iterations: 200,
            multistart: 20,
            seed: 0,
            allow_empty: false,
            provider: ProviderSettings::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        let cap = if n > 1 { 1.0 / n as f64 } else { 1.0 };
        if !(self.epsilon_min > 0.0 && self.epsilon_min <= self.epsilon_floor && self.epsilon_floor < cap) {
            return Err(Error::Invalid(format!(
                "need 0 < epsilon_min <= epsilon_floor < {cap}, got {} and {}",
                self.epsilon_min, self.epsilon_floor
            )));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Invalid(format!("damping {} outside (0, 1]", self.damping)));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Invalid("tolerance must be positive".into()));
        }
        if !(self.epsilon_anneal > 0.0 && self.epsilon_anneal < 1.0) {
            return Err(Error::Invalid("epsilon_anneal must lie in (0, 1)".into()));
        }
        if self.multistart == 0 || self.max_iterations == 0 {
            return Err(Error::Invalid("multistart and max_iterations must be positive".into()));
        }
        Ok(())
    }

    /// Floors from `epsilon_floor` down to `epsilon_min`.
    pub fn epsilon_schedule(&self) -> Vec<f64> {
        let mut out = vec![self.epsilon_floor];
        let mut eps = self.epsilon_floor;
        while eps > self.epsilon_min {
            eps = (eps * self.epsilon_anneal).max(self.epsilon_min);
            out.push(eps);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Residuals {
    /// `||f^m - m||_inf`.
    pub size_residual: f64,
    /// `||f^v - v||_inf`.
    pub characteristic_residual: f64,
    pub agent_max_regret: f64,
    pub provider_max_regret: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.size_residual.max(self.characteristic_residual).max(self.agent_max_regret).max(self.provider_max_regret)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub state: NominalState,
    #[serde(skip)]
    pub partition: Partition,
    pub realized_sizes: Vec<f64>,
    pub residuals: Residuals,
    pub all_nonempty: bool,
    pub iterations: usize,
    pub start_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stability_verdict: Option<StabilityVerdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub welfare_summary: Option<WelfareSummary>,
}

impl EquilibriumReport {
    /// Rebuilds the partition after deserialization.
    pub fn restore_partition(&mut self, model: &CostModel, measure: &SampledMeasure) {
        self.partition = assign(model, measure, &self.state);
    }
}

/// Characteristics and providers of an extended-model instance.
#[derive(Debug, Clone, Copy)]
pub struct ExtendedContext<'a> {
    pub characteristics: &'a CharacteristicsSpec,
    pub providers: &'a ProviderSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub residuals: Residuals,
    pub all_nonempty: bool,
    /// All residuals within tolerance and every community non-empty.
    pub certified: bool,
}

/// Recomputes the residuals of a report from scratch.
///
/// Agent regret compares, for every piece of the partition at the nominal
/// state, its assigned cost with the best alternative, both evaluated at the
/// realized sizes.
pub fn verify_equilibrium(
    model: &CostModel,
    measure: &SampledMeasure,
    report: &EquilibriumReport,
    extended: Option<ExtendedContext<'_>>,
    tolerance: f64,
) -> Verification {
    let state = &report.state;
    let partition = assign(model, measure, state);
    let size_residual = sup_distance(&partition.sizes, &state.m);
    let realized = state.with_sizes(partition.sizes.clone());
    let n = model.communities;
    let mut agent_max_regret: f64 = 0.0;
    for piece in partition.pieces.iter().filter(|p| p.mass > 0.0) {
        let own = piece_cost(model, measure, piece, piece.community, &realized);
        let best = (0..n)
            .filter(|&h| realized.m[h] > 0.0)
            .map(|h| piece_cost(model, measure, piece, h, &realized))
            .fold(f64::INFINITY, f64::min);
        let regret = own - best;
        if regret.is_nan() {
            agent_max_regret = f64::INFINITY;
        } else {
            agent_max_regret = agent_max_regret.max(regret);
        }
    }
    let mut characteristic_residual = 0.0;
    let mut provider_max_regret: f64 = 0.0;
    if let Some(ctx) = extended {
        characteristic_residual = match realized_characteristics(measure, &partition, ctx.characteristics, state) {
            Ok(v) => state.v.iter().zip(&v).map(|(a, b)| sup_distance(a, b)).fold(0.0, f64::max),
            Err(_) => f64::INFINITY,
        };
        for i in 0..ctx.providers.providers.len().min(n) {
            let regret =
                provider_regret(ctx.providers, i, state, &ProviderSettings::default()).unwrap_or(f64::INFINITY);
            provider_max_regret = provider_max_regret.max(regret);
        }
    }
    let residuals = Residuals { size_residual, characteristic_residual, agent_max_regret, provider_max_regret };
    let all_nonempty = partition.sizes.iter().all(|&s| s > 0.0);
    Verification { residuals, all_nonempty, certified: all_nonempty && residuals.max() <= tolerance }
}

pub(crate) fn build_report(
    model: &CostModel,
    measure: &SampledMeasure,
    state: NominalState,
    iterations: usize,
    start_index: usize,
    extended: Option<ExtendedContext<'_>>,
    config: &SolverConfig,
) -> EquilibriumReport {
    let partition = assign(model, measure, &state);
    let mut report = EquilibriumReport {
        realized_sizes: partition.sizes.clone(),
        state,
        partition,
        residuals: Residuals::default(),
        all_nonempty: false,
        iterations,
        start_index,
        stability_verdict: None,
        welfare_summary: None,
    };
    let check = verify_equilibrium(model, measure, &report, extended, config.tolerance);
    report.residuals = check.residuals;
    report.all_nonempty = check.all_nonempty && report.state.m.iter().all(|&x| x >= config.epsilon_min);
    report
}

pub fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Starting sizes: the barycenter, simplex vertices pulled halfway to it,
/// then uniform Dirichlet draws from a seeded stream.
pub fn start_points(n: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let bary = vec![1.0 / n as f64; n];
    let mut out = vec![bary.clone()];
    if n > 1 {
        for i in 0..n {
            out.push((0..n).map(|h| 0.5 * bary[h] + if h == i { 0.5 } else { 0.0 }).collect());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while out.len() < count {
        let draws: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
        let total: f64 = draws.iter().sum();
        out.push(draws.iter().map(|d| d / total).collect());
    }
    out.truncate(count.max(1));
    out
}

/// Drops states within `radius` (sup norm of sizes and parameters) of an
/// earlier one.
pub(crate) fn merge_duplicates(reports: Vec<EquilibriumReport>, radius: f64) -> Vec<EquilibriumReport> {
    let mut kept: Vec<EquilibriumReport> = Vec::new();
    for r in reports {
        let duplicate = kept.iter().any(|k| {
            sup_distance(&k.state.m, &r.state.m) <= radius
                && k.state.z.iter().zip(&r.state.z).all(|(a, b)| sup_distance(a, b) <= radius)
        });
        if !duplicate {
            kept.push(r);
        }
    }
    kept
}
