//! Assignment of agents to cost-minimizing communities.
//!
//! Every sample is labeled with its argmin community (ties to the lowest
//! index). Realized sizes are integrated more finely: for grid measures of
//! dimension <= 2, a cell whose costs cross inside it is split along the
//! lower envelope of the costs linearized at the cell midpoint. The split
//! makes the size map continuous in the nominal state, and a cell far from
//! every border contributes its whole weight to its label.

pub mod border;
pub(crate) mod cells;
pub mod characteristics;
mod state;

pub use border::{extract_border, indifference_locus, BorderPolyline, BorderVertex, Locus, LocusGrid, LocusKind};
pub use characteristics::{
    realized_characteristics, Calibration, CharacteristicDef, CharacteristicsSpec, Integrand, Normalization,
};
pub use state::NominalState;

use crate::costs::CostModel;
use crate::geometry::{area_centroid, clip_halfplane, Point2};
use crate::measure::SampledMeasure;
use cells::{cell_of, Cell};

/// A share of one sample's mass allotted to one community. Unsplit samples
/// give a single piece located at the sample point; split cells give one
/// piece per winning community located at the centroid of its sub-region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Piece {
    pub sample: usize,
    pub community: usize,
    pub mass: f64,
    /// Centroid in lifted coordinates when the piece comes from a split cell.
    pub centroid: Option<Point2>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Partition {
    /// Argmin community of every sample point.
    pub labels: Vec<usize>,
    pub pieces: Vec<Piece>,
    /// Realized sizes `f^m`.
    pub sizes: Vec<f64>,
    /// `type_masses[i][j]`: mass of type `j` in community `i`.
    pub type_masses: Vec<Vec<f64>>,
    /// Samples whose minimal cost is attained by several communities.
    pub tie_count: usize,
    /// Number of cells split between communities.
    pub split_cells: usize,
}

impl Partition {
    pub fn communities(&self) -> usize {
        self.sizes.len()
    }

    pub fn pieces_of(&self, community: usize) -> impl Iterator<Item = (usize, &Piece)> + '_ {
        self.pieces.iter().enumerate().filter(move |(_, p)| p.community == community)
    }

    /// Indices of communities with positive realized mass.
    pub fn nonempty(&self) -> Vec<usize> {
        (0..self.sizes.len()).filter(|&i| self.sizes[i] > 0.0).collect()
    }

    /// Location of a piece in type-space coordinates.
    pub fn piece_location(&self, measure: &SampledMeasure, piece: &Piece) -> Vec<f64> {
        let s = measure.sample(piece.sample);
        match (piece.centroid, cell_of(measure, s.type_index, s.point)) {
            (Some(c), Some(cell)) => {
                let mut out = Vec::new();
                cell.unlift(c, &mut out);
                out
            }
            _ => s.point.to_vec(),
        }
    }
}

/// Cost of community `h` for the agents of a piece, at `state`. Split pieces
/// use the cost linearized at their cell midpoint, matching the geometry the
/// split was made with.
pub fn piece_cost(model: &CostModel, measure: &SampledMeasure, piece: &Piece, h: usize, state: &NominalState) -> f64 {
    let s = measure.sample(piece.sample);
    let base = model.cost_unchecked(s.type_index, h, s.point, state);
    let (Some(c), Some(cell)) = (piece.centroid, cell_of(measure, s.type_index, s.point)) else {
        return base;
    };
    let mut grad = vec![0.0; s.point.len()];
    model.grad_x_lenient(s.type_index, h, s.point, state, &mut grad);
    let g = cell.lift(&grad);
    base + g[0] * (c[0] - cell.center[0]) + g[1] * (c[1] - cell.center[1])
}

/// Smallest gain `c_from(x, before) - c_to(x, after)` over the quadrature
/// cell holding `piece`, with both costs linearized at the cell center.
/// Samples without a cell fall back to the gain at the sample point.
pub fn piece_gain_floor(
    model: &CostModel,
    measure: &SampledMeasure,
    piece: &Piece,
    from: (usize, &NominalState),
    to: (usize, &NominalState),
) -> f64 {
    let s = measure.sample(piece.sample);
    let gain = model.cost_unchecked(s.type_index, from.0, s.point, from.1)
        - model.cost_unchecked(s.type_index, to.0, s.point, to.1);
    let Some(cell) = cell_of(measure, s.type_index, s.point) else {
        return gain;
    };
    let mut a = vec![0.0; s.point.len()];
    let mut b = vec![0.0; s.point.len()];
    model.grad_x_lenient(s.type_index, from.0, s.point, from.1, &mut a);
    model.grad_x_lenient(s.type_index, to.0, s.point, to.1, &mut b);
    let g: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    gain - cell.spread(cell.lift(&g))
}

/// Scratch buffers reused across samples.
struct Workspace {
    costs: Vec<f64>,
    grads: Vec<Point2>,
    grad: Vec<f64>,
    candidates: Vec<usize>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        Self { costs: vec![0.0; n], grads: vec![[0.0; 2]; n], grad: Vec::new(), candidates: Vec::new() }
    }
}

/// Visits every piece of the partition induced by `state`:
/// `visit(sample, label, community, mass, centroid)`. Returns the tie count.
fn for_each_piece(
    model: &CostModel,
    measure: &SampledMeasure,
    state: &NominalState,
    mut visit: impl FnMut(usize, usize, usize, f64, Option<Point2>),
) -> (usize, usize) {
    let n = model.communities;
    let mut ws = Workspace::new(n);
    let mut ties = 0;
    let mut splits = 0;
    for s in measure.samples() {
        let j = s.type_index;
        for i in 0..n {
            ws.costs[i] = model.cost_unchecked(j, i, s.point, state);
        }
        let mut label = 0;
        for i in 1..n {
            if ws.costs[i] < ws.costs[label] {
                label = i;
            }
        }
        if (0..n).any(|i| i != label && ws.costs[i] == ws.costs[label]) {
            ties += 1;
        }
        let cell = if n > 1 { cell_of(measure, j, s.point) } else { None };
        let Some(cell) = cell else {
            visit(s.index, label, label, s.weight, None);
            continue;
        };
        ws.grad.resize(s.point.len(), 0.0);
        for i in 0..n {
            model.grad_x_lenient(j, i, s.point, state, &mut ws.grad);
            ws.grads[i] = cell.lift(&ws.grad);
        }
        ws.candidates.clear();
        ws.candidates.push(label);
        for i in 0..n {
            if i == label {
                continue;
            }
            let dg = [ws.grads[i][0] - ws.grads[label][0], ws.grads[i][1] - ws.grads[label][1]];
            if ws.costs[i] - ws.costs[label] <= cell.spread(dg) {
                ws.candidates.push(i);
            }
        }
        if ws.candidates.len() == 1 {
            visit(s.index, label, label, s.weight, None);
            continue;
        }
        splits += 1;
        ws.candidates.sort_unstable();
        split_cell(&cell, &ws, s.index, label, s.weight, &mut visit);
    }
    (ties, splits)
}

fn split_cell(
    cell: &Cell,
    ws: &Workspace,
    sample: usize,
    label: usize,
    weight: f64,
    visit: &mut impl FnMut(usize, usize, usize, f64, Option<Point2>),
) {
    let mut regions: Vec<(usize, f64, Point2)> = Vec::with_capacity(ws.candidates.len());
    for &h in &ws.candidates {
        let mut poly = cell.polygon();
        for &o in &ws.candidates {
            if o == h {
                continue;
            }
            // lin_h - lin_o <= 0; ties go to the lower index
            let a = [ws.grads[h][0] - ws.grads[o][0], ws.grads[h][1] - ws.grads[o][1]];
            let c = ws.costs[h] - ws.costs[o] - a[0] * cell.center[0] - a[1] * cell.center[1];
            poly = clip_halfplane(&poly, a, c, o < h);
            if poly.is_empty() {
                break;
            }
        }
        let (area, centroid) = area_centroid(&poly);
        if area > 0.0 {
            regions.push((h, area, centroid));
        }
    }
    let total: f64 = regions.iter().map(|r| r.1).sum();
    if regions.is_empty() || !(total > 0.0) {
        visit(sample, label, label, weight, None);
        return;
    }
    for (h, area, centroid) in regions {
        visit(sample, label, h, weight * area / total, Some(centroid));
    }
}

/// Labels every sample with a cost-minimizing community and integrates
/// realized sizes and per-type masses.
pub fn assign(model: &CostModel, measure: &SampledMeasure, state: &NominalState) -> Partition {
    let n = model.communities;
    let q = measure.type_count();
    let mut labels = vec![0; measure.len()];
    let mut pieces = Vec::with_capacity(measure.len());
    let (tie_count, split_cells) = for_each_piece(model, measure, state, |sample, label, community, mass, centroid| {
        labels[sample] = label;
        pieces.push(Piece { sample, community, mass, centroid });
    });
    let mut sizes = vec![0.0; n];
    let mut type_masses = vec![vec![0.0; q]; n];
    for p in &pieces {
        sizes[p.community] += p.mass;
        let (j, _) = measure.locate(p.sample);
        type_masses[p.community][j] += p.mass;
    }
    Partition { labels, pieces, sizes, type_masses, tie_count, split_cells }
}

/// Realized sizes `f^m(m, v, z)`; its fixed points are the equilibria.
pub fn size_map(model: &CostModel, measure: &SampledMeasure, state: &NominalState) -> Vec<f64> {
    let mut sizes = vec![0.0; model.communities];
    for_each_piece(model, measure, state, |_, _, community, mass, _| sizes[community] += mass);
    sizes
}

/// Per-sample costs for the partition dump: assigned cost and the best
/// alternative.
pub fn partition_csv(
    model: &CostModel,
    measure: &SampledMeasure,
    state: &NominalState,
    partition: &Partition,
) -> String {
    use std::fmt::Write as _;
    let kmax = measure.types.iter().map(|t| t.dimension()).max().unwrap_or(0);
    let mut out = String::new();
    for d in 1..=kmax {
        let _ = write!(out, "x_{d},");
    }
    out.push_str("type,label,cost_assigned,cost_best_alternative\n");
    for s in measure.samples() {
        let label = partition.labels[s.index];
        for d in 0..kmax {
            match s.point.get(d) {
                Some(v) => {
                    let _ = write!(out, "{v},");
                }
                None => out.push(','),
            }
        }
        let assigned = model.cost_unchecked(s.type_index, label, s.point, state);
        let alternative = (0..model.communities)
            .filter(|&i| i != label)
            .map(|i| model.cost_unchecked(s.type_index, i, s.point, state))
            .fold(f64::INFINITY, f64::min);
        let alt = if alternative.is_finite() { alternative.to_string() } else { String::new() };
        let _ = writeln!(out, "{},{},{},{}", s.type_index, label, assigned, alt);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{build_grid_measure, build_monte_carlo_measure, Population, TypeSpace};

    fn line(cells: usize) -> SampledMeasure {
        build_grid_measure(&Population::single(TypeSpace::unit_cube(1)), cells).unwrap()
    }

    fn inst_1d(g: f64) -> CostModel {
        CostModel::metric_fixed_share(vec![vec![0.0], vec![1.0]], g, 1.0)
    }

    fn sizes(m: &[f64]) -> NominalState {
        NominalState::sizes(m.to_vec(), 1e-3)
    }

    #[test]
    fn symmetric_split_on_line() {
        let p = assign(&inst_1d(0.1), &line(10_000), &sizes(&[0.5, 0.5]));
        assert!((p.sizes[0] - 0.5).abs() < 1e-12);
        assert!((p.sizes.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn asymmetric_split_on_line() {
        // x + 0.1/0.2 = (1 - x) + 0.1/0.8  =>  x = 0.3125
        let p = assign(&inst_1d(0.1), &line(10_000), &sizes(&[0.2, 0.8]));
        assert!((p.sizes[0] - 0.3125).abs() < 1e-12);
        assert!((p.sizes[1] - 0.6875).abs() < 1e-12);
    }

    #[test]
    fn crossing_inside_a_cell_is_exact() {
        // 7 cells: the crossing at 0.3125 falls strictly inside a cell
        let f = size_map(&inst_1d(0.1), &line(7), &sizes(&[0.2, 0.8]));
        assert!((f[0] - 0.3125).abs() < 1e-12, "{f:?}");
    }

    #[test]
    fn asymmetric_fixed_point() {
        let m1 = (1.0 - 0.6f64.sqrt()) / 2.0;
        let f = size_map(&inst_1d(0.1), &line(10_000), &sizes(&[m1, 1.0 - m1]));
        assert!((f[0] - m1).abs() < 1e-9);
    }

    #[test]
    fn small_group_repels() {
        let f = size_map(&inst_1d(0.1), &line(10_000), &sizes(&[0.05, 0.95]));
        assert!(f[0] < 0.05);
        assert_eq!(f[0], 0.0);
    }

    #[test]
    fn square_vertical_border() {
        let mu = build_grid_measure(&Population::single(TypeSpace::unit_cube(2)), 101).unwrap();
        let model = CostModel::metric_fixed_share(vec![vec![0.25, 0.5], vec![0.75, 0.5]], 0.05, 1.0);
        let p = assign(&model, &mu, &sizes(&[0.5, 0.5]));
        assert!((p.sizes[0] - 0.5).abs() < 1e-12, "{:?}", p.sizes);
        assert!(p.split_cells > 0);
        for s in mu.samples() {
            let expected = usize::from(s.point[0] > 0.5);
            if (s.point[0] - 0.5).abs() > 1e-9 {
                assert_eq!(p.labels[s.index], expected);
            }
        }
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let mu = build_grid_measure(&Population::single(TypeSpace::unit_cube(1)), 4).unwrap();
        let model = CostModel::metric_fixed_share(vec![vec![0.5], vec![0.5]], 0.1, 1.0);
        let p = assign(&model, &mu, &sizes(&[0.5, 0.5]));
        assert!(p.labels.iter().all(|&l| l == 0));
        assert_eq!(p.tie_count, 4);
        assert_eq!(p.sizes, vec![1.0, 0.0]);
    }

    #[test]
    fn monte_carlo_pieces_are_unsplit() {
        let mu = build_monte_carlo_measure(&Population::single(TypeSpace::unit_cube(1)), 500, 1).unwrap();
        let p = assign(&inst_1d(0.1), &mu, &sizes(&[0.5, 0.5]));
        assert_eq!(p.pieces.len(), 500);
        assert!(p.pieces.iter().all(|piece| piece.centroid.is_none()));
    }

    #[test]
    fn piece_cost_matches_exact_cost_on_linear_pieces() {
        let mu = line(11);
        let model = inst_1d(0.1);
        let st = sizes(&[0.3, 0.7]);
        let p = assign(&model, &mu, &st);
        for piece in p.pieces.iter().filter(|q| q.centroid.is_some()) {
            let x = p.piece_location(&mu, piece);
            for h in 0..2 {
                let exact = model.cost_unchecked(0, h, &x, &st);
                assert!((piece_cost(&model, &mu, piece, h, &st) - exact).abs() < 1e-12);
            }
        }
    }
}
