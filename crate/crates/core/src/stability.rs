//! Weak and strong stability of equilibria against group deviations.
//!
//! A deviation moves a group of members of community `i` to community `j`.
//! Each member compares its current cost with its cost in `j` at the sizes
//! after the move; the deviation is profitable when every member strictly
//! gains. Weak stability only admits groups inside a small ball, strong
//! stability admits any group of small mass. Strong stability is certified
//! by the border condition
//!
//! `int_T f(x) / ||grad c_j - grad c_i|| dw + 1 / (d c_j / d m_j) < 0`
//!
//! and falsified by searching for profitable border strips.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costs::CostModel;
use crate::equilibrium::EquilibriumReport;
use crate::error::{Error, Result};
use crate::geometry::distance;
use crate::measure::SampledMeasure;
use crate::partition::{assign, extract_border, piece_cost, piece_gain_floor, BorderPolyline, NominalState, Partition};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StabilitySettings {
    pub epsilon_ball: f64,
    pub weak_trials: usize,
    pub epsilon_mass: f64,
    pub strong_trials: usize,
    /// Evaluation grid cells per axis for border extraction.
    pub border_resolution: usize,
    pub seed: u64,
}

impl Default for StabilitySettings {
    fn default() -> Self {
        Self {
            epsilon_ball: 0.02,
            weak_trials: 500,
            epsilon_mass: 0.05,
            strong_trials: 200,
            border_resolution: 401,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationMember {
    /// Index into the equilibrium partition's pieces.
    pub piece: usize,
    pub sample: usize,
    pub mass: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationCandidate {
    pub source: usize,
    pub target: usize,
    pub members: Vec<DeviationMember>,
    pub mass: f64,
    /// Smallest member gain; zero for an empty group.
    pub worst_member_gain: f64,
}

impl DeviationCandidate {
    /// Builds the candidate moving `pieces` from `source` to `target` and
    /// evaluates every member's gain.
    pub fn evaluate(
        model: &CostModel,
        measure: &SampledMeasure,
        state: &NominalState,
        partition: &Partition,
        source: usize,
        target: usize,
        pieces: &[usize],
    ) -> Self {
        let mass: f64 = pieces.iter().map(|&p| partition.pieces[p].mass).sum();
        let gains = member_gains(model, measure, state, partition, source, target, pieces);
        let members: Vec<DeviationMember> = pieces
            .iter()
            .zip(&gains)
            .map(|(&p, &gain)| DeviationMember {
                piece: p,
                sample: partition.pieces[p].sample,
                mass: partition.pieces[p].mass,
                gain,
            })
            .collect();
        let worst_member_gain =
            if gains.is_empty() { 0.0 } else { gains.iter().copied().fold(f64::INFINITY, f64::min) };
        Self { source, target, members, mass, worst_member_gain }
    }

    /// Every member strictly gains; an empty group never does.
    pub fn is_profitable(&self) -> bool {
        !self.members.is_empty() && self.worst_member_gain > 0.0
    }
}

fn member_gains(
    model: &CostModel,
    measure: &SampledMeasure,
    state: &NominalState,
    partition: &Partition,
    source: usize,
    target: usize,
    pieces: &[usize],
) -> Vec<f64> {
    let dm: f64 = pieces.iter().map(|&p| partition.pieces[p].mass).sum();
    let mut after = state.m.clone();
    after[source] -= dm;
    after[target] += dm;
    let moved = state.with_sizes(after);
    pieces
        .iter()
        .map(|&p| piece_gain_floor(model, measure, &partition.pieces[p], (source, state), (target, &moved)))
        .collect()
}

fn partition_of(model: &CostModel, measure: &SampledMeasure, eq: &EquilibriumReport) -> Partition {
    if eq.partition.pieces.is_empty() {
        assign(model, measure, &eq.state)
    } else {
        eq.partition.clone()
    }
}

/// Replays a candidate against the equilibrium: per-member gains
/// `c_i(x, m) - c_j(x, m')` with `m' = m - dm e_i + dm e_j`, taken at the
/// worst point of each member's cell.
pub fn verify_deviation(
    model: &CostModel,
    measure: &SampledMeasure,
    eq: &EquilibriumReport,
    candidate: &DeviationCandidate,
) -> Vec<f64> {
    let partition = partition_of(model, measure, eq);
    let pieces: Vec<usize> = candidate.members.iter().map(|m| m.piece).collect();
    member_gains(model, measure, &eq.state, &partition, candidate.source, candidate.target, &pieces)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SearchOutcome {
    pub trials: usize,
    /// Ball radius of a weak search.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    pub counterexample: Option<DeviationCandidate>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl SearchOutcome {
    pub fn found_deviation(&self) -> bool {
        self.counterexample.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCondition {
    pub i: usize,
    pub j: usize,
    pub integral_value: f64,
    pub scale_term: f64,
    pub satisfied: bool,
    /// Number of border windows evaluated (1 for the whole border).
    pub windows: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl PairCondition {
    pub fn value(&self) -> f64 {
        self.integral_value + self.scale_term
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    Unstable,
    WeaklyStableOnly,
    StronglyStable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityVerdict {
    pub weak: SearchOutcome,
    pub conditions: Vec<PairCondition>,
    pub strong_search: SearchOutcome,
    pub classification: Classification,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// Per-piece data at the equilibrium: location and cost in every community.
struct Pieces {
    partition: Partition,
    locations: Vec<Vec<f64>>,
    costs: Vec<Vec<f64>>,
}

impl Pieces {
    fn new(model: &CostModel, measure: &SampledMeasure, eq: &EquilibriumReport) -> Self {
        let partition = partition_of(model, measure, eq);
        let n = model.communities;
        let locations: Vec<Vec<f64>> = partition.pieces.iter().map(|p| partition.piece_location(measure, p)).collect();
        let costs: Vec<Vec<f64>> = partition
            .pieces
            .iter()
            .map(|p| (0..n).map(|h| piece_cost(model, measure, p, h, &eq.state)).collect())
            .collect();
        Self { partition, locations, costs }
    }

    /// Mass of the cells split by a border: strips thinner than this only
    /// resolve discretization noise.
    fn split_mass(&self, measure: &SampledMeasure) -> f64 {
        let mut count = vec![0u8; measure.len()];
        for p in &self.partition.pieces {
            count[p.sample] = count[p.sample].saturating_add(1);
        }
        count.iter().enumerate().filter(|(_, &c)| c > 1).map(|(s, _)| measure.sample(s).weight).sum()
    }

    /// Cost increase of moving piece `p` from its community to `j`.
    fn gap(&self, p: usize, j: usize) -> f64 {
        let own = self.partition.pieces[p].community;
        self.costs[p][j] - self.costs[p][own]
    }

    fn members_of(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.partition.pieces.len()).filter(move |&p| {
            let piece = &self.partition.pieces[p];
            piece.community == i && piece.mass > 0.0
        })
    }
}

/// Borders of all adjacent unordered pairs, where extractable.
fn borders(
    model: &CostModel,
    measure: &SampledMeasure,
    state: &NominalState,
    resolution: usize,
) -> Vec<Result<BorderPolyline>> {
    let n = model.communities;
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            match extract_border(model, measure, state, i, j, resolution) {
                Err(Error::EmptyBorder { .. }) => {}
                other => out.push(other),
            }
        }
    }
    out
}

fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

/// Randomized search for a profitable deviation by a subset of an
/// `epsilon_ball`-ball centered on a border.
///
/// Each trial draws a border point, a direction `i -> j` and a cost band
/// `d gamma`, and tries the members of `i` in the ball whose cost in `j`
/// exceeds their current cost by less than `d gamma`.
pub fn weak_stability_search(
    model: &CostModel,
    measure: &SampledMeasure,
    eq: &EquilibriumReport,
    epsilon_ball: f64,
    trials: usize,
    seed: u64,
    border_resolution: usize,
) -> SearchOutcome {
    let pieces = Pieces::new(model, measure, eq);
    let mut centers: Vec<(usize, usize, Vec<f64>)> = Vec::new();
    for border in borders(model, measure, &eq.state, border_resolution).into_iter().flatten() {
        for v in border.vertices() {
            centers.push((border.i, border.j, border.location(v)));
        }
    }
    let mut warnings = Vec::new();
    if centers.is_empty() {
        // no extractable border: use the pieces closest to indifference
        let n = model.communities;
        let mut near: Vec<(f64, usize, usize)> = Vec::new();
        for p in 0..pieces.partition.pieces.len() {
            let own = pieces.partition.pieces[p].community;
            for j in (0..n).filter(|&j| j != own) {
                near.push((pieces.gap(p, j), p, j));
            }
        }
        near.sort_by(|a, b| a.0.total_cmp(&b.0));
        near.truncate((near.len() / 50).max(1).min(near.len()));
        for (_, p, j) in near {
            let own = pieces.partition.pieces[p].community;
            centers.push((own.min(j), own.max(j), pieces.locations[p].clone()));
        }
        if !centers.is_empty() {
            warnings.push("border not extractable; centers drawn from near-indifferent agents".into());
        }
    }
    if centers.is_empty() {
        return SearchOutcome { trials: 0, radius: Some(epsilon_ball), counterexample: None, warnings };
    }
    let found: Vec<Option<DeviationCandidate>> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = trial_rng(seed, trial);
            let (a, b, center) = &centers[rng.random_range(0..centers.len())];
            let (i, j) = if rng.random::<bool>() { (*a, *b) } else { (*b, *a) };
            let in_ball: Vec<usize> =
                pieces.members_of(i).filter(|&p| distance(&pieces.locations[p], center) <= epsilon_ball).collect();
            let widest = in_ball.iter().map(|&p| pieces.gap(p, j)).fold(0.0, f64::max);
            let band = rng.random::<f64>() * widest;
            let members: Vec<usize> = in_ball.into_iter().filter(|&p| pieces.gap(p, j) <= band).collect();
            let candidate = DeviationCandidate::evaluate(model, measure, &eq.state, &pieces.partition, i, j, &members);
            candidate.is_profitable().then_some(candidate)
        })
        .collect();
    SearchOutcome { trials, radius: Some(epsilon_ball), counterexample: found.into_iter().flatten().next(), warnings }
}

/// Weak stability asks for some ball radius that admits no profitable
/// deviation. Starts at `settings.epsilon_ball` and halves the radius after
/// every hit, down to one cell width of the measure (an eighth of the
/// initial radius for sampled measures). Returns the last search run.
pub fn weak_stability_certify(
    model: &CostModel,
    measure: &SampledMeasure,
    eq: &EquilibriumReport,
    settings: &StabilitySettings,
) -> SearchOutcome {
    let cell =
        measure.types.iter().filter_map(|t| t.cell_half_widths.as_ref()).flatten().fold(0.0f64, |w, h| w.max(2.0 * h));
    let floor = if cell > 0.0 { cell } else { settings.epsilon_ball / 8.0 };
    let mut radius = settings.epsilon_ball;
    let mut rejected = Vec::new();
    loop {
        let mut outcome = weak_stability_search(
            model,
            measure,
            eq,
            radius,
            settings.weak_trials,
            settings.seed,
            settings.border_resolution,
        );
        if !outcome.found_deviation() || 0.5 * radius < floor {
            if !rejected.is_empty() {
                outcome.warnings.push(format!("profitable deviations inside balls of radius {rejected:?}"));
            }
            return outcome;
        }
        rejected.push(radius);
        radius *= 0.5;
    }
}

/// Border condition for moves from `i` to `j`.
///
/// Separable costs use the whole border. Otherwise the condition is checked
/// on contiguous windows of every border polyline (and on the whole border),
/// taking as `y` the window vertex with the largest `|1 / (d c_j / d m_j)|`;
/// the reported values are those of the worst window. One-dimensional borders
/// are points, evaluated as `f(x) / |c_j' - c_i'|`.
pub fn strong_stability_condition(
    model: &CostModel,
    measure: &SampledMeasure,
    eq: &EquilibriumReport,
    i: usize,
    j: usize,
    border_resolution: usize,
) -> Result<PairCondition> {
    let border = extract_border(model, measure, &eq.state, i, j, border_resolution)?;
    let mut notes = Vec::new();
    if border.dimension == 1 {
        notes.push("one-dimensional border evaluated as a point condition".to_string());
    }
    let scale_at = |v: &crate::partition::BorderVertex| -> Result<f64> {
        let d = model.dcost_dm(0, j, &border.location(v), &eq.state)?;
        Ok(1.0 / d)
    };
    if model.flags().separable {
        let first = border.vertices().next().ok_or(Error::EmptyBorder { i, j })?;
        let integral_value = border.weighted_integral();
        let scale_term = scale_at(first)?;
        return Ok(PairCondition {
            i,
            j,
            integral_value,
            scale_term,
            satisfied: integral_value + scale_term < 0.0,
            windows: 1,
            notes,
        });
    }
    notes.push("non-separable costs: y chosen as the window vertex with the largest |1/(dc_j/dm_j)|".into());
    let mut windows: Vec<Vec<&crate::partition::BorderVertex>> = vec![border.vertices().collect()];
    for line in &border.polylines {
        let width = (line.len() / 8).max(2).min(line.len());
        let stride = (width / 2).max(1);
        let mut start = 0;
        while start < line.len() {
            let end = (start + width).min(line.len());
            windows.push(line[start..end].iter().collect());
            if end == line.len() {
                break;
            }
            start += stride;
        }
    }
    let mut worst: Option<(f64, f64)> = None;
    let mut all_satisfied = true;
    for window in &windows {
        let integral: f64 = window.iter().map(|v| v.density / v.grad_gap * v.arc_weight).sum();
        let mut scale = f64::NEG_INFINITY;
        for v in window {
            let s = scale_at(v)?;
            if worst_scale(s, scale) {
                scale = s;
            }
        }
        if integral + scale >= 0.0 {
            all_satisfied = false;
        }
        if worst.is_none_or(|(a, b)| integral + scale > a + b) {
            worst = Some((integral, scale));
        }
    }
    let (integral_value, scale_term) = worst.ok_or(Error::EmptyBorder { i, j })?;
    Ok(PairCondition { i, j, integral_value, scale_term, satisfied: all_satisfied, windows: windows.len(), notes })
}

/// `s` has the larger magnitude (first value always wins).
fn worst_scale(s: f64, current: f64) -> bool {
    current == f64::NEG_INFINITY || s.abs() > current.abs()
}

/// Searches for a profitable deviation of mass about `epsilon_mass`: strips
/// of the members of `i` closest to indifference with `j`, shrunk by halves,
/// then strips restricted to random windows around border points.
pub fn strong_stability_search(
    model: &CostModel,
    measure: &SampledMeasure,
    eq: &EquilibriumReport,
    epsilon_mass: f64,
    trials: usize,
    seed: u64,
) -> SearchOutcome {
    let pieces = Pieces::new(model, measure, eq);
    let n = model.communities;
    let smallest = measure.samples().map(|s| s.weight).fold(f64::INFINITY, f64::min);
    if !(epsilon_mass >= smallest) {
        return SearchOutcome {
            trials: 0,
            radius: None,
            counterexample: None,
            warnings: vec![format!("mass {epsilon_mass:e} below one sample weight {smallest:e}; search is vacuous")],
        };
    }
    let resolution = smallest.max(pieces.split_mass(measure));
    let mut warnings = Vec::new();
    if epsilon_mass < resolution {
        warnings.push(format!(
            "mass {epsilon_mass:e} below the split-cell mass {resolution:e}; strips are not resolved by the sample"
        ));
    }
    let strip = |members: Vec<usize>, j: usize, mass: f64| -> Vec<usize> {
        let mut sorted = members;
        sorted.sort_by(|&a, &b| pieces.gap(a, j).total_cmp(&pieces.gap(b, j)));
        let mut total = 0.0;
        let mut out = Vec::new();
        for p in sorted {
            if total >= mass {
                break;
            }
            total += pieces.partition.pieces[p].mass;
            out.push(p);
        }
        out
    };
    let mut evaluated = 0;
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            let mut mass = epsilon_mass;
            for _ in 0..6 {
                if mass < resolution && mass < epsilon_mass {
                    break;
                }
                let members = strip(pieces.members_of(i).collect(), j, mass);
                evaluated += 1;
                let c = DeviationCandidate::evaluate(model, measure, &eq.state, &pieces.partition, i, j, &members);
                if c.is_profitable() {
                    return SearchOutcome { trials: evaluated, radius: None, counterexample: Some(c), warnings };
                }
                mass *= 0.5;
            }
        }
    }
    if n < 2 {
        return SearchOutcome { trials: evaluated, radius: None, counterexample: None, warnings };
    }
    let diameter = (0..measure.type_count()).map(|t| measure.diameter(t)).fold(0.0, f64::max);
    let found: Vec<Option<DeviationCandidate>> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = trial_rng(seed, trial);
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            let members: Vec<usize> = pieces.members_of(i).collect();
            // window center: one of the members closest to indifference
            let near = strip(members.clone(), j, epsilon_mass);
            if near.is_empty() {
                return None;
            }
            let center = &pieces.locations[near[rng.random_range(0..near.len())]];
            let radius = diameter * (0.05 + 0.95 * rng.random::<f64>());
            let window: Vec<usize> =
                members.into_iter().filter(|&p| distance(&pieces.locations[p], center) <= radius).collect();
            let mass = (epsilon_mass * (0.25 + 0.75 * rng.random::<f64>())).max(resolution.min(epsilon_mass));
            let members = strip(window, j, mass);
            let c = DeviationCandidate::evaluate(model, measure, &eq.state, &pieces.partition, i, j, &members);
            c.is_profitable().then_some(c)
        })
        .collect();
    SearchOutcome {
        trials: evaluated + trials,
        radius: None,
        counterexample: found.into_iter().flatten().next(),
        warnings,
    }
}

/// Border conditions for every ordered adjacent pair. Pairs without a
/// border are skipped; pairs whose border cannot be evaluated count as
/// unsatisfied, with the reason noted.
pub fn pair_conditions(
    model: &CostModel,
    measure: &SampledMeasure,
    eq: &EquilibriumReport,
    border_resolution: usize,
) -> Vec<PairCondition> {
    let n = model.communities;
    let mut out = Vec::new();
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            match strong_stability_condition(model, measure, eq, i, j, border_resolution) {
                Ok(c) => out.push(c),
                Err(Error::EmptyBorder { .. }) => {}
                Err(e) => out.push(PairCondition {
                    i,
                    j,
                    integral_value: f64::NAN,
                    scale_term: f64::NAN,
                    satisfied: false,
                    windows: 0,
                    notes: vec![e.to_string()],
                }),
            }
        }
    }
    out
}

/// Weak search, border conditions and strong search combined.
pub fn classify_stability(
    model: &CostModel,
    measure: &SampledMeasure,
    eq: &EquilibriumReport,
    settings: &StabilitySettings,
) -> StabilityVerdict {
    let weak = weak_stability_certify(model, measure, eq, settings);
    let conditions = pair_conditions(model, measure, eq, settings.border_resolution);
    let strong_search =
        strong_stability_search(model, measure, eq, settings.epsilon_mass, settings.strong_trials, settings.seed);
    let mut notes = Vec::new();
    let classification = if weak.found_deviation() {
        notes.push("weak deviation found: equilibrium certification or model assumptions are suspect".into());
        Classification::Unstable
    } else if conditions.iter().all(|c| c.satisfied) && !strong_search.found_deviation() {
        Classification::StronglyStable
    } else {
        Classification::WeaklyStableOnly
    };
    if conditions.is_empty() && model.communities > 1 {
        notes.push("no border condition could be evaluated".into());
    }
    StabilityVerdict { weak, conditions, strong_search, classification, notes }
}
