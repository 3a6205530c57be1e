//! Assumption spot-checks run by `validate`. Nothing here solves for an
//! equilibrium.

use serde_json::json;

use tiebout::costs::{indifference_gap_measure, small_group_floor, CostModel};
use tiebout::equilibrium::{floor_bound, start_points};
use tiebout::measure::SampledMeasure;
use tiebout::partition::NominalState;

use crate::report::{Diagnostic, Severity};

const PROBE_DELTAS: [f64; 2] = [1e-3, 1e-4];
const ATOM_MASS: f64 = 0.01;
const FLAT_DELTAS: [f64; 3] = [1e-3, 1e-4, 1e-5];

/// Indifference-band checks at seeded probe states, plus a search for
/// atoms of the cost difference that some state turns into a positive-mass
/// indifferent set.
pub fn hyperbola_probe(
    model: &CostModel,
    measure: &SampledMeasure,
    template: &NominalState,
    seed: u64,
) -> Vec<Diagnostic> {
    let n = model.communities;
    let mut out = Vec::new();
    let states: Vec<NominalState> = start_points(n, n + 5, seed).into_iter().map(|m| template.with_sizes(m)).collect();
    for i in 0..n {
        for j in i + 1..n {
            for state in &states {
                let [wide, narrow] = PROBE_DELTAS.map(|d| indifference_gap_measure(model, measure, state, i, j, d));
                if narrow > 1e-6 && narrow > 0.5 * wide {
                    out.push(
                        Diagnostic::new(
                            "hyperbola-property-violation",
                            Severity::Warning,
                            format!("indifferent mass between {i} and {j} does not shrink with the band at the probed state"),
                        )
                        .with_details(json!({ "pair": [i, j], "m": state.m, "delta": PROBE_DELTAS, "measure": [wide, narrow] })),
                    );
                }
            }
            for atom in cost_difference_atoms(model, measure, template, i, j) {
                if let Some(d) = flat_state(model, measure, template, i, j, &atom) {
                    out.push(d);
                }
            }
        }
    }
    out
}

struct Atom {
    sample: usize,
    gap: f64,
    mass: f64,
}

/// Clusters of samples sharing one cost difference, heaviest first.
fn cost_difference_atoms(
    model: &CostModel,
    measure: &SampledMeasure,
    state: &NominalState,
    i: usize,
    j: usize,
) -> Vec<Atom> {
    let mut gaps: Vec<(f64, f64, usize)> = measure
        .samples()
        .map(|s| {
            let gap = model.cost_unchecked(s.type_index, i, s.point, state)
                - model.cost_unchecked(s.type_index, j, s.point, state);
            (gap, s.weight, s.index)
        })
        .filter(|g| g.0.is_finite())
        .collect();
    gaps.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut atoms = Vec::new();
    let mut start = 0;
    while start < gaps.len() {
        let anchor = gaps[start].0;
        let width = 1e-9 * (1.0 + anchor.abs());
        let mut end = start;
        let mut mass = 0.0;
        while end < gaps.len() && gaps[end].0 - anchor <= width {
            mass += gaps[end].1;
            end += 1;
        }
        if mass >= ATOM_MASS && end - start > 1 {
            atoms.push(Atom { sample: gaps[start].2, gap: anchor, mass });
        }
        start = end;
    }
    atoms.sort_by(|a, b| b.mass.total_cmp(&a.mass));
    atoms.truncate(3);
    atoms
}

/// Moves mass between `i` and `j` until the atom is indifferent, then
/// measures thin indifference bands there.
fn flat_state(
    model: &CostModel,
    measure: &SampledMeasure,
    template: &NominalState,
    i: usize,
    j: usize,
    atom: &Atom,
) -> Option<Diagnostic> {
    let s = measure.sample(atom.sample);
    let pool = template.m[i] + template.m[j];
    let floor = template.epsilon.min(0.25 * pool);
    let at = |t: f64| {
        let mut m = template.m.clone();
        m[i] = t;
        m[j] = pool - t;
        template.with_sizes(m)
    };
    let h = |t: f64| {
        let state = at(t);
        model.cost_unchecked(s.type_index, i, s.point, &state) - model.cost_unchecked(s.type_index, j, s.point, &state)
    };
    let (mut lo, mut hi) = (floor, pool - floor);
    let (h_lo, h_hi) = (h(lo), h(hi));
    if !(h_lo.is_finite() && h_hi.is_finite()) || (h_lo < 0.0) == (h_hi < 0.0) {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (h(mid) < 0.0) == (h_lo < 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let state = at(0.5 * (lo + hi));
    let values = FLAT_DELTAS.map(|d| indifference_gap_measure(model, measure, &state, i, j, d));
    let smallest = values.iter().copied().fold(f64::INFINITY, f64::min);
    (smallest >= 0.5 * atom.mass).then(|| {
        Diagnostic::new(
            "hyperbola-property-violation",
            Severity::Warning,
            format!(
                "a set of mass {:.4} is indifferent between {i} and {j} at the probed state; \
                 the indifferent mass stays at {smallest:.4} as the band shrinks",
                atom.mass
            ),
        )
        .with_details(json!({
            "pair": [i, j],
            "m": state.m,
            "cost_difference": atom.gap,
            "atom_mass": atom.mass,
            "delta": FLAT_DELTAS,
            "measure": values,
        }))
    })
}

/// Small groups must price themselves out: below some size every agent
/// pays more than twice the largest cost it can be forced to bear.
pub fn small_group_probe(model: &CostModel, measure: &SampledMeasure, template: &NominalState) -> Vec<Diagnostic> {
    if model.communities < 2 {
        return Vec::new();
    }
    let bound = floor_bound(model, measure, template);
    match small_group_floor(model, measure, bound, template) {
        Ok(floors) => vec![Diagnostic::new(
            "small-group-floor",
            Severity::Info,
            "small groups attract nobody below the listed sizes",
        )
        .with_details(json!({ "bound": bound, "floors": floors }))],
        Err(e) => vec![Diagnostic::new(
            "small-group-ineffectiveness-violated",
            Severity::Warning,
            format!("small-group ineffectiveness fails: {e}"),
        )
        .with_details(json!({ "bound": bound }))],
    }
}
