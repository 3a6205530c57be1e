//! Sperner labeling of a triangulated restricted simplex.
//!
//! Lattice points are `m_i = eps + (1 - n eps) k_i / D` with `sum k_i = D`.
//! In the cumulative coordinates `y_i = k_1 + ... + k_i` the lattice is the
//! set `0 <= y_1 <= ... <= y_{n-1} <= D`, and the Kuhn triangulation of the
//! unit cubes restricted to that set triangulates the simplex.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costs::CostModel;
use crate::error::{Error, Result};
use crate::measure::SampledMeasure;
use crate::partition::{size_map, NominalState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KkmCell {
    /// Vertex sizes, one per label.
    pub vertices: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    /// Some vertex lies on a facet of the restricted simplex.
    pub touches_boundary: bool,
}

impl KkmCell {
    pub fn center(&self) -> Vec<f64> {
        let k = self.vertices.len() as f64;
        let n = self.vertices[0].len();
        (0..n).map(|i| self.vertices.iter().map(|v| v[i]).sum::<f64>() / k).collect()
    }

    /// Whether `m` lies in the cell grown by `slack` in sup norm.
    pub fn contains(&self, m: &[f64], slack: f64) -> bool {
        (0..m.len()).all(|i| {
            let lo = self.vertices.iter().map(|v| v[i]).fold(f64::INFINITY, f64::min);
            let hi = self.vertices.iter().map(|v| v[i]).fold(f64::NEG_INFINITY, f64::max);
            m[i] >= lo - slack && m[i] <= hi + slack
        })
    }
}

fn sizes_of(y: &[usize], depth: usize, eps: f64) -> Vec<f64> {
    let n = y.len() + 1;
    let budget = 1.0 - n as f64 * eps;
    let mut prev = 0;
    let mut m = Vec::with_capacity(n);
    for &c in y.iter().chain(std::iter::once(&depth)) {
        m.push(eps + budget * (c - prev) as f64 / depth as f64);
        prev = c;
    }
    m
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

/// Nondecreasing sequences `0 <= y_1 <= ... <= y_dim <= depth`.
fn lattice(dim: usize, depth: usize) -> Vec<Vec<usize>> {
    fn fill(k: usize, lo: usize, depth: usize, y: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        for c in lo..=depth {
            y[k] = c;
            if k + 1 == y.len() {
                out.push(y.clone());
            } else {
                fill(k + 1, c, depth, y, out);
            }
        }
    }
    let mut out = Vec::new();
    fill(0, 0, depth, &mut vec![0; dim], &mut out);
    out
}

fn ordered(y: &[usize], depth: usize) -> bool {
    y.windows(2).all(|w| w[0] <= w[1]) && y.last().is_none_or(|&v| v <= depth)
}

/// Fully labeled cells of the depth-`depth` triangulation of `M_eps`.
///
/// A vertex is labeled with the lowest `i` such that `f_i(m) >= m_i`; such an
/// index always exists because both vectors sum to one.
pub fn kkm_oracle(model: &CostModel, measure: &SampledMeasure, epsilon: f64, depth: usize) -> Result<Vec<KkmCell>> {
    let n = model.communities;
    if !(2..=4).contains(&n) {
        return Err(Error::Invalid(format!("Sperner search supports 2 to 4 communities, got {n}")));
    }
    if depth < 1 || !(epsilon > 0.0 && epsilon < 1.0 / n as f64) {
        return Err(Error::Invalid("need depth >= 1 and 0 < epsilon < 1/n".into()));
    }
    let dim = n - 1;
    let points = lattice(dim, depth);
    let template = NominalState::barycenter(n, epsilon);
    let labels: Vec<usize> = points
        .par_iter()
        .map(|y| {
            let m = sizes_of(y, depth, epsilon);
            let f = size_map(model, measure, &template.with_sizes(m.clone()));
            (0..n).find(|&i| f[i] >= m[i]).unwrap_or(n - 1)
        })
        .collect();
    let index: HashMap<&[usize], usize> = points.iter().enumerate().map(|(k, p)| (p.as_slice(), k)).collect();
    let perms = permutations(dim);
    let mut cells = Vec::new();
    for base in &points {
        if base.iter().any(|&c| c >= depth) {
            continue;
        }
        for perm in &perms {
            let mut vertex = base.clone();
            let mut ids = vec![index[base.as_slice()]];
            let mut valid = true;
            for &axis in perm {
                vertex[axis] += 1;
                if !ordered(&vertex, depth) {
                    valid = false;
                    break;
                }
                ids.push(index[vertex.as_slice()]);
            }
            if !valid {
                continue;
            }
            let mut seen: Vec<usize> = ids.iter().map(|&k| labels[k]).collect();
            seen.sort_unstable();
            seen.dedup();
            if seen.len() == n {
                let vertices: Vec<Vec<f64>> = ids.iter().map(|&k| sizes_of(&points[k], depth, epsilon)).collect();
                let touches_boundary = ids.iter().any(|&k| {
                    let p = &points[k];
                    p[0] == 0 || p[dim - 1] == depth || p.windows(2).any(|w| w[0] == w[1])
                });
                cells.push(KkmCell { vertices, labels: ids.iter().map(|&k| labels[k]).collect(), touches_boundary });
            }
        }
    }
    if cells.is_empty() {
        return Err(Error::NoFullyLabeledCell { depth });
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{build_grid_measure, Population, TypeSpace};

    #[test]
    fn symmetric_pair_brackets_half() {
        let mu = build_grid_measure(&Population::single(TypeSpace::unit_cube(1)), 1000).unwrap();
        let model = CostModel::metric_fixed_share(vec![vec![0.0], vec![1.0]], 0.3, 1.0);
        let cells = kkm_oracle(&model, &mu, 1e-3, 4).unwrap();
        assert!(cells.iter().any(|c| c.contains(&[0.5, 0.5], 1e-12)));
    }

    #[test]
    fn three_communities_triangulation() {
        let mu = build_grid_measure(&Population::single(TypeSpace::unit_cube(2)), 30).unwrap();
        let centers = vec![vec![0.2, 0.2], vec![0.8, 0.2], vec![0.5, 0.8]];
        let model = CostModel::metric_fixed_share(centers, 0.02, 1.0);
        let cells = kkm_oracle(&model, &mu, 1e-3, 8).unwrap();
        assert!(cells.iter().all(|c| c.vertices.len() == 3));
        let mut labels = cells[0].labels.clone();
        labels.sort_unstable();
        assert_eq!(labels, vec![0, 1, 2]);
    }

    #[test]
    fn lattice_sizes_sum_to_one() {
        let m = sizes_of(&[2, 5], 8, 0.01);
        assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(permutations(3).len(), 6);
        assert_eq!(lattice(2, 3).len(), 10);
    }
}
