//! Borders between adjacent communities and indifference loci.

use serde::{Deserialize, Serialize};

use super::NominalState;
use crate::costs::{CostModel, CostTerm};
use crate::error::{Error, Result};
use crate::geometry::{chain_segments, distance, marching_squares, GridField, Point2};
use crate::measure::SampledMeasure;

/// Gradient gaps below this value violate the border regularity assumption.
pub const GRADIENT_GAP_TOLERANCE: f64 = 1e-8;
/// Vertices are projected onto the indifference set to this accuracy.
pub const BORDER_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BorderVertex {
    /// Vertex location; in one dimension the second coordinate is zero.
    pub point: Point2,
    pub density: f64,
    pub grad_gap: f64,
    pub arc_weight: f64,
}

/// The set where `c_i = c_j <= c_h` for every other `h`, as polylines.
/// In one dimension the border is a set of points, each with arc weight 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BorderPolyline {
    pub i: usize,
    pub j: usize,
    pub dimension: usize,
    pub polylines: Vec<Vec<BorderVertex>>,
    pub length: f64,
}

impl BorderPolyline {
    pub fn vertices(&self) -> impl Iterator<Item = &BorderVertex> + '_ {
        self.polylines.iter().flatten()
    }

    /// `sum f(x) / ||grad c_j - grad c_i|| dw` over the whole border.
    pub fn weighted_integral(&self) -> f64 {
        self.vertices().map(|v| v.density / v.grad_gap * v.arc_weight).sum()
    }

    pub fn location(&self, v: &BorderVertex) -> Vec<f64> {
        v.point[..self.dimension].to_vec()
    }

    /// CSV with columns `vx_1,vx_2,density,grad_gap,arc_weight`.
    pub fn to_csv(&self, header: bool) -> String {
        let mut out = String::new();
        if header {
            out.push_str("i,j,polyline,vx_1,vx_2,density,grad_gap,arc_weight\n");
        }
        for (k, line) in self.polylines.iter().enumerate() {
            for v in line {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    self.i, self.j, k, v.point[0], v.point[1], v.density, v.grad_gap, v.arc_weight
                ));
            }
        }
        out
    }
}

fn single_type(measure: &SampledMeasure) -> Result<usize> {
    if measure.type_count() != 1 {
        return Err(Error::Invalid("border extraction supports a single agent type".into()));
    }
    let k = measure.types[0].dimension();
    if k > 2 {
        return Err(Error::UnsupportedDimension(k));
    }
    Ok(k)
}

struct Pair<'a> {
    model: &'a CostModel,
    state: &'a NominalState,
    i: usize,
    j: usize,
}

impl Pair<'_> {
    fn gap(&self, x: &[f64]) -> f64 {
        self.model.cost_unchecked(0, self.j, x, self.state) - self.model.cost_unchecked(0, self.i, x, self.state)
    }

    fn gap_gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut gi = vec![0.0; x.len()];
        let mut gj = vec![0.0; x.len()];
        self.model.grad_x_lenient(0, self.i, x, self.state, &mut gi);
        self.model.grad_x_lenient(0, self.j, x, self.state, &mut gj);
        gj.iter().zip(&gi).map(|(a, b)| a - b).collect()
    }

    /// Both communities are optimal at `x`.
    fn is_minimal(&self, x: &[f64]) -> bool {
        let ci = self.model.cost_unchecked(0, self.i, x, self.state);
        let cj = self.model.cost_unchecked(0, self.j, x, self.state);
        let best = (0..self.model.communities)
            .map(|h| self.model.cost_unchecked(0, h, x, self.state))
            .fold(f64::INFINITY, f64::min);
        ci.min(cj) <= best + 1e-9 * (1.0 + best.abs())
    }

    fn project(&self, x: &mut [f64], lower: &[f64], upper: &[f64]) {
        for _ in 0..4 {
            let d = self.gap(x);
            if d.abs() < 1e-15 {
                break;
            }
            let g = self.gap_gradient(x);
            let norm2: f64 = g.iter().map(|v| v * v).sum();
            if norm2 == 0.0 {
                break;
            }
            for k in 0..x.len() {
                x[k] = (x[k] - d * g[k] / norm2).clamp(lower[k], upper[k]);
            }
        }
    }
}

/// Traces the `(i, j)` border on an evaluation grid with `resolution` cells
/// per axis, annotating vertices with density, gradient gap and arc weight.
pub fn extract_border(
    model: &CostModel,
    measure: &SampledMeasure,
    state: &NominalState,
    i: usize,
    j: usize,
    resolution: usize,
) -> Result<BorderPolyline> {
    let k = single_type(measure)?;
    let space = &measure.types[0].space;
    let pair = Pair { model, state, i, j };
    let resolution = resolution.max(2);
    let mut lines: Vec<Vec<Vec<f64>>> = Vec::new();
    if k == 1 {
        let (lo, hi) = (space.lower[0], space.upper[0]);
        let step = (hi - lo) / resolution as f64;
        let node = |n: usize| lo + n as f64 * step;
        let mut previous = pair.gap(&[lo]);
        for n in 1..=resolution {
            let current = pair.gap(&[node(n)]);
            if (previous < 0.0) != (current < 0.0) {
                let (mut a, mut b) = (node(n - 1), node(n));
                for _ in 0..200 {
                    let mid = 0.5 * (a + b);
                    if (pair.gap(&[mid]) < 0.0) == (previous < 0.0) {
                        a = mid;
                    } else {
                        b = mid;
                    }
                }
                let x = vec![0.5 * (a + b)];
                if pair.is_minimal(&x) && space.in_support(&x) {
                    lines.push(vec![x]);
                }
            }
            previous = current;
        }
    } else {
        let origin = [space.lower[0], space.lower[1]];
        let extent = [space.upper[0] - space.lower[0], space.upper[1] - space.lower[1]];
        let field = GridField::sample(origin, extent, resolution, resolution, |p| pair.gap(&p));
        let segments: Vec<_> = marching_squares(&field)
            .into_iter()
            .filter(|s| {
                let mid = s.midpoint();
                space.in_support(&mid) && pair.is_minimal(&mid)
            })
            .collect();
        for chain in chain_segments(&segments) {
            lines.push(
                chain
                    .into_iter()
                    .map(|p| {
                        let mut x = p.to_vec();
                        pair.project(&mut x, &space.lower, &space.upper);
                        x
                    })
                    .collect(),
            );
        }
    }
    if lines.is_empty() {
        return Err(Error::EmptyBorder { i, j });
    }
    let mut polylines = Vec::with_capacity(lines.len());
    let mut length = 0.0;
    for line in lines {
        let seg: Vec<f64> = line.windows(2).map(|w| distance(&w[0], &w[1])).collect();
        length += seg.iter().sum::<f64>();
        let mut vertices = Vec::with_capacity(line.len());
        for (n, x) in line.iter().enumerate() {
            let arc_weight = if k == 1 {
                1.0
            } else {
                0.5 * (if n > 0 { seg[n - 1] } else { 0.0 } + seg.get(n).copied().unwrap_or(0.0))
            };
            let grad_gap = pair.gap_gradient(x).iter().map(|v| v * v).sum::<f64>().sqrt();
            if grad_gap < GRADIENT_GAP_TOLERANCE {
                return Err(Error::DegenerateGradient { i, j, gap: grad_gap });
            }
            vertices.push(BorderVertex {
                point: [x[0], if k == 2 { x[1] } else { 0.0 }],
                density: measure.density(0, x),
                grad_gap,
                arc_weight,
            });
        }
        polylines.push(vertices);
    }
    Ok(BorderPolyline { i, j, dimension: k, polylines, length })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocusGrid {
    pub lower: Point2,
    pub upper: Point2,
    pub resolution: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LocusKind {
    Bisector,
    Hyperbola,
    DegenerateRay,
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Locus {
    pub delta_p: f64,
    pub kind: LocusKind,
    pub polylines: Vec<Vec<Point2>>,
}

/// Agents indifferent between two centers when the second charges `delta_p`
/// less: `lambda (||x - x1|| - ||x - x2||) = delta_p`. The distance scale
/// `lambda` is read from the model's first metric term.
pub fn indifference_locus(model: &CostModel, centers: [Point2; 2], delta_p: f64, grid: &LocusGrid) -> Locus {
    let scale = model
        .terms
        .iter()
        .find_map(|t| match t.term {
            CostTerm::Metric { scale, .. } => Some(scale),
            _ => None,
        })
        .unwrap_or(1.0);
    let [a, b] = centers;
    let separation = scale * distance(&a, &b);
    let tol = 1e-9 * separation.max(1.0);
    if delta_p.abs() > separation + tol || separation == 0.0 {
        return Locus { delta_p, kind: LocusKind::Empty, polylines: Vec::new() };
    }
    if delta_p.abs() >= separation - tol {
        // the level set collapses onto the ray leaving the cheaper center
        let (from, away) = if delta_p > 0.0 { (b, a) } else { (a, b) };
        let norm = distance(&from, &away);
        let dir = [(from[0] - away[0]) / norm, (from[1] - away[1]) / norm];
        let mut t0: f64 = 0.0;
        let mut t1: f64 = f64::INFINITY;
        for d in 0..2 {
            if dir[d].abs() < 1e-15 {
                if from[d] < grid.lower[d] || from[d] > grid.upper[d] {
                    t1 = -1.0;
                }
                continue;
            }
            let ta = (grid.lower[d] - from[d]) / dir[d];
            let tb = (grid.upper[d] - from[d]) / dir[d];
            t0 = t0.max(ta.min(tb));
            t1 = t1.min(ta.max(tb));
        }
        let polylines = if t1 >= t0 {
            vec![vec![[from[0] + t0 * dir[0], from[1] + t0 * dir[1]], [from[0] + t1 * dir[0], from[1] + t1 * dir[1]]]]
        } else {
            Vec::new()
        };
        return Locus { delta_p, kind: LocusKind::DegenerateRay, polylines };
    }
    let extent = [grid.upper[0] - grid.lower[0], grid.upper[1] - grid.lower[1]];
    let field = GridField::sample(grid.lower, extent, grid.resolution, grid.resolution, |p| {
        scale * (distance(&p, &a) - distance(&p, &b)) - delta_p
    });
    let polylines = chain_segments(&marching_squares(&field));
    let kind = if polylines.is_empty() {
        LocusKind::Empty
    } else if delta_p == 0.0 {
        LocusKind::Bisector
    } else {
        LocusKind::Hyperbola
    };
    Locus { delta_p, kind, polylines }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{build_grid_measure, Population, TypeSpace};

    fn sq2() -> (CostModel, SampledMeasure, NominalState) {
        (
            CostModel::metric_fixed_share(vec![vec![0.25, 0.5], vec![0.75, 0.5]], 0.05, 1.0),
            build_grid_measure(&Population::single(TypeSpace::unit_cube(2)), 20).unwrap(),
            NominalState::sizes(vec![0.5, 0.5], 1e-3),
        )
    }

    #[test]
    fn square_border_is_the_bisector() {
        let (model, mu, state) = sq2();
        let border = extract_border(&model, &mu, &state, 0, 1, 200).unwrap();
        assert!((border.length - 1.0).abs() < 0.01);
        for v in border.vertices() {
            assert!((v.point[0] - 0.5).abs() < 1e-9);
            let r = (0.0625 + (v.point[1] - 0.5).powi(2)).sqrt();
            assert!((v.grad_gap - 0.5 / r).abs() < 1e-9);
        }
        let center =
            border.vertices().min_by(|a, b| (a.point[1] - 0.5).abs().total_cmp(&(b.point[1] - 0.5).abs())).unwrap();
        assert!((center.point[1] - 0.5).abs() < 1e-12);
        assert!((center.grad_gap - 2.0).abs() < 1e-9);
    }

    #[test]
    fn line_border_is_a_point() {
        let model = CostModel::metric_fixed_share(vec![vec![0.0], vec![1.0]], 0.1, 1.0);
        let mu = build_grid_measure(&Population::single(TypeSpace::unit_cube(1)), 100).unwrap();
        let border = extract_border(&model, &mu, &NominalState::sizes(vec![0.5, 0.5], 1e-3), 0, 1, 101).unwrap();
        assert_eq!(border.polylines.len(), 1);
        let v = border.polylines[0][0];
        assert!((v.point[0] - 0.5).abs() < 1e-12);
        assert_eq!(v.arc_weight, 1.0);
        assert!((v.grad_gap - 2.0).abs() < 1e-12);
    }

    #[test]
    fn far_apart_communities_share_no_border() {
        let model = CostModel::metric_fixed_share(vec![vec![0.1], vec![0.5], vec![0.9]], 0.01, 1.0);
        let mu = build_grid_measure(&Population::single(TypeSpace::unit_cube(1)), 100).unwrap();
        let state = NominalState::sizes(vec![1.0 / 3.0; 3], 1e-3);
        assert_eq!(extract_border(&model, &mu, &state, 0, 2, 100), Err(Error::EmptyBorder { i: 0, j: 2 }));
        assert!(extract_border(&model, &mu, &state, 0, 1, 100).is_ok());
    }

    #[test]
    fn flat_distance_has_no_border() {
        let model = CostModel::metric_fixed_share(vec![vec![0.25, 0.5], vec![0.75, 0.5]], 0.05, 0.0);
        let (_, mu, _) = sq2();
        let state = NominalState::sizes(vec![0.4, 0.6], 1e-3);
        // no gap variation: no sign change, no border
        assert!(extract_border(&model, &mu, &state, 0, 1, 50).is_err());
    }

    #[test]
    fn locus_shapes() {
        let model = CostModel::metric_fixed_share(vec![vec![0.25, 0.5], vec![0.75, 0.5]], 0.0, 1.0);
        let centers = [[0.25, 0.5], [0.75, 0.5]];
        let grid = LocusGrid { lower: [0.0, 0.0], upper: [1.0, 1.0], resolution: 100 };
        let bisector = indifference_locus(&model, centers, 0.0, &grid);
        assert_eq!(bisector.kind, LocusKind::Bisector);
        assert!(bisector.polylines.iter().flatten().all(|p| (p[0] - 0.5).abs() < 1e-9));
        let hyperbola = indifference_locus(&model, centers, 0.3, &grid);
        assert_eq!(hyperbola.kind, LocusKind::Hyperbola);
        for p in hyperbola.polylines.iter().flatten() {
            let value = distance(p, &centers[0]) - distance(p, &centers[1]);
            assert!((value - 0.3).abs() < 1e-3);
        }
        let ray = indifference_locus(&model, centers, 0.5, &grid);
        assert_eq!(ray.kind, LocusKind::DegenerateRay);
        assert_eq!(ray.polylines, vec![vec![[0.75, 0.5], [1.0, 0.5]]]);
        assert_eq!(indifference_locus(&model, centers, 0.6, &grid).kind, LocusKind::Empty);
    }
}
