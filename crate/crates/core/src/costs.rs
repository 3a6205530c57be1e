//! Agent cost functions `c^j_i(x, m, v, z)` built from composable terms.
//!
//! The benchmark model is [`CostModel::metric_fixed_share`]: a distance to
//! the community center plus a fixed cost shared among members. Other terms
//! add dependence on provider parameters, characteristics or the sizes of
//! other communities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::clip_halfplane;
use crate::measure::SampledMeasure;
use crate::partition::cells::cell_of;
use crate::partition::NominalState;

/// A scalar broadcast to every community, or one value per community.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerCommunity {
    Uniform(f64),
    Each(Vec<f64>),
}

impl PerCommunity {
    pub fn get(&self, i: usize) -> f64 {
        match self {
            PerCommunity::Uniform(v) => *v,
            PerCommunity::Each(vs) => vs[i],
        }
    }

    fn len_ok(&self, n: usize) -> bool {
        match self {
            PerCommunity::Uniform(_) => true,
            PerCommunity::Each(vs) => vs.len() == n,
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        match self {
            PerCommunity::Uniform(v) => PerCommunity::Uniform(v * factor),
            PerCommunity::Each(vs) => PerCommunity::Each(vs.iter().map(|v| v * factor).collect()),
        }
    }

    fn min(&self) -> f64 {
        match self {
            PerCommunity::Uniform(v) => *v,
            PerCommunity::Each(vs) => vs.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }
}

fn two() -> f64 {
    2.0
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CostTerm {
    /// `scale * ||x - center_i||_p`.
    Metric {
        centers: Vec<Vec<f64>>,
        #[serde(default = "two")]
        p: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    /// Distance to a location chosen by the provider: the center is
    /// `z_i[offset..offset + k]`.
    ProviderMetric {
        #[serde(default)]
        offset: usize,
        #[serde(default = "two")]
        p: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    /// `scale * ||x - center_i||^2`.
    Quadratic {
        centers: Vec<Vec<f64>>,
        #[serde(default = "one")]
        scale: f64,
    },
    /// `g_i / m_i`.
    FixedShare { g: PerCommunity },
    /// `g_i (1 + slope . x) / m_i`; the scale gain depends on location.
    LocalizedShare { g: PerCommunity, slope: Vec<f64> },
    /// `coefficient * z_i[index]`.
    Fee {
        #[serde(default)]
        index: usize,
        #[serde(default = "one")]
        coefficient: f64,
    },
    /// `sum_l weights[l] * v_i[l]`.
    CharacteristicCoupling { weights: Vec<f64> },
    /// `coefficient * sum_{h != i} m_h`.
    Spillover { coefficient: f64 },
    /// Constant per-community offset.
    Offset { values: PerCommunity },
}

/// A cost term restricted to some agent types (all types when `types` is
/// absent).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScopedTerm {
    #[serde(flatten)]
    pub term: CostTerm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub types: Option<Vec<usize>>,
}

impl From<CostTerm> for ScopedTerm {
    fn from(term: CostTerm) -> Self {
        Self { term, types: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum GradientMode {
    #[default]
    Analytic,
    /// Central differences with relative steps.
    CentralDifference {
        #[serde(default = "default_step")]
        h_x: f64,
        #[serde(default = "default_step")]
        h_m: f64,
    },
}

fn default_step() -> f64 {
    1e-5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostFlags {
    pub separable: bool,
    pub depends_on_other_sizes: bool,
    pub depends_on_characteristics: bool,
    pub depends_on_provider_params: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub communities: usize,
    pub terms: Vec<ScopedTerm>,
    #[serde(default)]
    pub gradient: GradientMode,
}

fn p_norm(u: &[f64], p: f64) -> f64 {
    if p == 2.0 {
        u.iter().map(|x| x * x).sum::<f64>().sqrt()
    } else if p.is_infinite() {
        u.iter().fold(0.0, |a, x| a.max(x.abs()))
    } else {
        u.iter().map(|x| x.abs().powf(p)).sum::<f64>().powf(1.0 / p)
    }
}

/// Adds `scale * d||u||_p/du` into `out`; zero at `u = 0`.
fn add_p_norm_gradient(u: &[f64], p: f64, scale: f64, out: &mut [f64]) {
    let norm = p_norm(u, p);
    if norm == 0.0 {
        return;
    }
    for (o, x) in out.iter_mut().zip(u) {
        *o += scale
            * if p == 2.0 {
                x / norm
            } else if p == 1.0 {
                x.signum()
            } else {
                x.signum() * (x.abs() / norm).powf(p - 1.0)
            };
    }
}

impl CostModel {
    /// Benchmark cost `scale * ||x - x_i|| + g / m_i`.
    pub fn metric_fixed_share(centers: Vec<Vec<f64>>, g: f64, scale: f64) -> Self {
        let n = centers.len();
        Self {
            communities: n,
            terms: vec![
                CostTerm::Metric { centers, p: 2.0, scale }.into(),
                CostTerm::FixedShare { g: PerCommunity::Uniform(g) }.into(),
            ],
            gradient: GradientMode::Analytic,
        }
    }

    pub fn with_term(mut self, term: CostTerm) -> Self {
        self.terms.push(term.into());
        self
    }

    pub fn flags(&self) -> CostFlags {
        let mut flags = CostFlags {
            separable: true,
            depends_on_other_sizes: false,
            depends_on_characteristics: false,
            depends_on_provider_params: false,
        };
        for t in &self.terms {
            match t.term {
                CostTerm::LocalizedShare { .. } => flags.separable = false,
                CostTerm::Spillover { .. } => {
                    flags.separable = false;
                    flags.depends_on_other_sizes = true;
                }
                CostTerm::CharacteristicCoupling { .. } => {
                    flags.separable = false;
                    flags.depends_on_characteristics = true;
                }
                CostTerm::ProviderMetric { .. } | CostTerm::Fee { .. } => flags.depends_on_provider_params = true,
                _ => {}
            }
        }
        flags
    }

    /// Checks parameter shapes against the type-space dimensions.
    pub fn validate(&self, dimensions: &[usize]) -> Result<()> {
        let n = self.communities;
        let bad = |msg: String| Err(Error::Invalid(msg));
        if n == 0 {
            return bad("cost model needs at least one community".into());
        }
        for (k, t) in self.terms.iter().enumerate() {
            if let Some(types) = &t.types {
                if types.iter().any(|&j| j >= dimensions.len()) {
                    return bad(format!("term {k} refers to an unknown agent type"));
                }
            }
            let applies: Vec<usize> = match &t.types {
                Some(types) => types.iter().map(|&j| dimensions[j]).collect(),
                None => dimensions.to_vec(),
            };
            match &t.term {
                CostTerm::Metric { centers, p, scale } => {
                    if centers.len() != n {
                        return bad(format!("term {k}: expected {n} centers"));
                    }
                    if applies.iter().any(|&d| centers.iter().any(|c| c.len() != d)) {
                        return bad(format!("term {k}: center dimension mismatch"));
                    }
                    if !(*p >= 1.0) || *scale < 0.0 {
                        return bad(format!("term {k}: need p >= 1 and scale >= 0"));
                    }
                }
                CostTerm::Quadratic { centers, .. } => {
                    if centers.len() != n || applies.iter().any(|&d| centers.iter().any(|c| c.len() != d)) {
                        return bad(format!("term {k}: center shape mismatch"));
                    }
                }
                CostTerm::ProviderMetric { p, scale, .. } => {
                    if !(*p >= 1.0) || *scale < 0.0 {
                        return bad(format!("term {k}: need p >= 1 and scale >= 0"));
                    }
                }
                CostTerm::FixedShare { g } | CostTerm::LocalizedShare { g, .. } => {
                    if !g.len_ok(n) || g.min() < 0.0 {
                        return bad(format!("term {k}: fixed costs must be nonnegative, one per community"));
                    }
                    if let CostTerm::LocalizedShare { slope, .. } = &t.term {
                        if applies.iter().any(|&d| d != slope.len()) {
                            return bad(format!("term {k}: slope dimension mismatch"));
                        }
                    }
                }
                CostTerm::Offset { values } => {
                    if !values.len_ok(n) {
                        return bad(format!("term {k}: one offset per community"));
                    }
                }
                CostTerm::Fee { .. } | CostTerm::CharacteristicCoupling { .. } | CostTerm::Spillover { .. } => {}
            }
        }
        Ok(())
    }

    fn applies(term: &ScopedTerm, j: usize) -> bool {
        term.types.as_ref().is_none_or(|ts| ts.contains(&j))
    }

    fn has_share_term(&self) -> bool {
        self.terms.iter().any(|t| matches!(t.term, CostTerm::FixedShare { .. } | CostTerm::LocalizedShare { .. }))
    }

    /// Cost without argument checks; `+inf` for a zero-size community with
    /// a share term.
    pub fn cost_unchecked(&self, j: usize, i: usize, x: &[f64], state: &NominalState) -> f64 {
        let mut total = 0.0;
        for t in self.terms.iter().filter(|t| Self::applies(t, j)) {
            total += match &t.term {
                CostTerm::Metric { centers, p, scale } => {
                    let u: Vec<f64> = x.iter().zip(&centers[i]).map(|(a, b)| a - b).collect();
                    scale * p_norm(&u, *p)
                }
                CostTerm::ProviderMetric { offset, p, scale } => {
                    let z = &state.z[i][*offset..*offset + x.len()];
                    let u: Vec<f64> = x.iter().zip(z).map(|(a, b)| a - b).collect();
                    scale * p_norm(&u, *p)
                }
                CostTerm::Quadratic { centers, scale } => {
                    scale * x.iter().zip(&centers[i]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
                }
                CostTerm::FixedShare { g } => g.get(i) / state.m[i],
                CostTerm::LocalizedShare { g, slope } => {
                    g.get(i) * (1.0 + slope.iter().zip(x).map(|(s, v)| s * v).sum::<f64>()) / state.m[i]
                }
                CostTerm::Fee { index, coefficient } => coefficient * state.z[i][*index],
                CostTerm::CharacteristicCoupling { weights } => {
                    weights.iter().zip(&state.v[i]).map(|(w, v)| w * v).sum::<f64>()
                }
                CostTerm::Spillover { coefficient } => {
                    coefficient * state.m.iter().enumerate().filter(|(h, _)| *h != i).map(|(_, v)| v).sum::<f64>()
                }
                CostTerm::Offset { values } => values.get(i),
            };
        }
        total
    }

    pub fn eval_cost(&self, j: usize, i: usize, x: &[f64], state: &NominalState) -> Result<f64> {
        if state.m[i] <= 0.0 && self.has_share_term() {
            return Err(Error::ZeroSizeCommunity { community: i });
        }
        Ok(self.cost_unchecked(j, i, x, state))
    }

    /// Part of the cost that depends on the agent's location.
    pub fn distance_part(&self, j: usize, i: usize, x: &[f64], state: &NominalState) -> f64 {
        let located = CostModel {
            communities: self.communities,
            terms: self
                .terms
                .iter()
                .filter(|t| {
                    matches!(
                        t.term,
                        CostTerm::Metric { .. } | CostTerm::ProviderMetric { .. } | CostTerm::Quadratic { .. }
                    )
                })
                .cloned()
                .collect(),
            gradient: self.gradient,
        };
        located.cost_unchecked(j, i, x, state)
    }

    fn near_center(&self, j: usize, i: usize, x: &[f64], state: &NominalState, tol: f64) -> bool {
        self.terms.iter().filter(|t| Self::applies(t, j)).any(|t| {
            let center: &[f64] = match &t.term {
                CostTerm::Metric { centers, .. } => &centers[i],
                CostTerm::ProviderMetric { offset, .. } => &state.z[i][*offset..*offset + x.len()],
                _ => return false,
            };
            x.iter().zip(center).all(|(a, b)| (a - b).abs() <= tol)
        })
    }

    /// Gradient in `x` that never fails: non-smooth metric points get the
    /// zero subgradient.
    pub fn grad_x_lenient(&self, j: usize, i: usize, x: &[f64], state: &NominalState, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        match self.gradient {
            GradientMode::Analytic => {
                for t in self.terms.iter().filter(|t| Self::applies(t, j)) {
                    match &t.term {
                        CostTerm::Metric { centers, p, scale } => {
                            let u: Vec<f64> = x.iter().zip(&centers[i]).map(|(a, b)| a - b).collect();
                            add_p_norm_gradient(&u, *p, *scale, out);
                        }
                        CostTerm::ProviderMetric { offset, p, scale } => {
                            let z = &state.z[i][*offset..*offset + x.len()];
                            let u: Vec<f64> = x.iter().zip(z).map(|(a, b)| a - b).collect();
                            add_p_norm_gradient(&u, *p, *scale, out);
                        }
                        CostTerm::Quadratic { centers, scale } => {
                            for ((o, a), b) in out.iter_mut().zip(x).zip(&centers[i]) {
                                *o += 2.0 * scale * (a - b);
                            }
                        }
                        CostTerm::LocalizedShare { g, slope } => {
                            for (o, s) in out.iter_mut().zip(slope) {
                                *o += g.get(i) * s / state.m[i];
                            }
                        }
                        _ => {}
                    }
                }
            }
            GradientMode::CentralDifference { h_x, .. } => {
                let mut probe = x.to_vec();
                for d in 0..x.len() {
                    let h = h_x * x[d].abs().max(1.0);
                    probe[d] = x[d] + h;
                    let up = self.cost_unchecked(j, i, &probe, state);
                    probe[d] = x[d] - h;
                    let down = self.cost_unchecked(j, i, &probe, state);
                    probe[d] = x[d];
                    out[d] = (up - down) / (2.0 * h);
                }
            }
        }
    }

    pub fn grad_x(&self, j: usize, i: usize, x: &[f64], state: &NominalState) -> Result<Vec<f64>> {
        let h = match self.gradient {
            GradientMode::Analytic => 1e-12,
            GradientMode::CentralDifference { h_x, .. } => h_x,
        };
        if self.near_center(j, i, x, state, h) {
            return Err(Error::SingularPoint { community: i });
        }
        let mut out = vec![0.0; x.len()];
        self.grad_x_lenient(j, i, x, state, &mut out);
        Ok(out)
    }

    /// Partial derivative in the community's own size `m_i`.
    pub fn dcost_dm(&self, j: usize, i: usize, x: &[f64], state: &NominalState) -> Result<f64> {
        if state.m[i] <= 0.0 {
            return Err(Error::ZeroSizeCommunity { community: i });
        }
        Ok(match self.gradient {
            GradientMode::Analytic => self
                .terms
                .iter()
                .filter(|t| Self::applies(t, j))
                .map(|t| match &t.term {
                    CostTerm::FixedShare { g } => -g.get(i) / (state.m[i] * state.m[i]),
                    CostTerm::LocalizedShare { g, slope } => {
                        -g.get(i) * (1.0 + slope.iter().zip(x).map(|(s, v)| s * v).sum::<f64>())
                            / (state.m[i] * state.m[i])
                    }
                    _ => 0.0,
                })
                .sum(),
            GradientMode::CentralDifference { h_m, .. } => {
                let h = (h_m * state.m[i]).min(0.5 * state.m[i]);
                let mut probe = state.clone();
                probe.m[i] = state.m[i] + h;
                let up = self.cost_unchecked(j, i, x, &probe);
                probe.m[i] = state.m[i] - h;
                let down = self.cost_unchecked(j, i, x, &probe);
                (up - down) / (2.0 * h)
            }
        })
    }

    /// Cost with community `i`'s size replaced by `mi`.
    fn cost_at_size(&self, j: usize, i: usize, x: &[f64], state: &NominalState, mi: f64) -> f64 {
        let mut s = state.clone();
        s.m[i] = mi;
        self.cost_unchecked(j, i, x, &s)
    }
}

/// Mass of agents whose cost difference between `i1` and `i2` lies in a
/// band of total width `delta` around indifference, `|c_i1 - c_i2| < delta/2`.
///
/// Grid cells of dimension <= 2 are integrated with the cost difference
/// linearized inside the cell, which keeps the estimate resolved for bands
/// much thinner than a cell.
pub fn indifference_gap_measure(
    model: &CostModel,
    measure: &SampledMeasure,
    state: &NominalState,
    i1: usize,
    i2: usize,
    delta: f64,
) -> f64 {
    if delta <= 0.0 {
        return 0.0;
    }
    let half_band = 0.5 * delta;
    let mut total = 0.0;
    let mut g1 = Vec::new();
    let mut g2 = Vec::new();
    for s in measure.samples() {
        let gap = model.cost_unchecked(s.type_index, i1, s.point, state)
            - model.cost_unchecked(s.type_index, i2, s.point, state);
        let Some(cell) = cell_of(measure, s.type_index, s.point) else {
            if gap.abs() < half_band {
                total += s.weight;
            }
            continue;
        };
        g1.resize(s.point.len(), 0.0);
        g2.resize(s.point.len(), 0.0);
        model.grad_x_lenient(s.type_index, i1, s.point, state, &mut g1);
        model.grad_x_lenient(s.type_index, i2, s.point, state, &mut g2);
        let grad: Vec<f64> = g1.iter().zip(&g2).map(|(a, b)| a - b).collect();
        let g = cell.lift(&grad);
        let spread = cell.spread(g);
        if gap.abs() - spread >= half_band {
            continue;
        }
        if gap.abs() + spread < half_band {
            total += s.weight;
            continue;
        }
        // gap(y) = gap + g.(y - c); keep gap(y) < h and -gap(y) < h
        let offset = gap - g[0] * cell.center[0] - g[1] * cell.center[1];
        let upper = clip_halfplane(&cell.polygon(), g, offset - half_band, true);
        let band = clip_halfplane(&upper, [-g[0], -g[1]], -offset - half_band, true);
        let (area, _) = crate::geometry::area_centroid(&band);
        total += s.weight * (area / cell.area()).min(1.0);
    }
    total
}

/// Interior probe states of the simplex: a lattice for small `n`, plus the
/// barycenter.
fn probe_states(n: usize, floor: f64, template: &NominalState) -> Vec<NominalState> {
    let divisions = match n {
        1 => 0,
        2 => 16,
        3 => 8,
        4 => 6,
        _ => 2,
    };
    let mut states = Vec::new();
    let mut composition = vec![0usize; n];
    fn recurse(k: usize, left: usize, comp: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k + 1 == comp.len() {
            comp[k] = left;
            out.push(comp.clone());
            return;
        }
        for c in 0..=left {
            comp[k] = c;
            recurse(k + 1, left - c, comp, out);
        }
    }
    let mut comps = Vec::new();
    if n > 1 {
        recurse(0, divisions, &mut composition, &mut comps);
    }
    let budget = 1.0 - floor * n as f64;
    for comp in comps {
        let m: Vec<f64> = comp.iter().map(|&c| floor + budget * c as f64 / divisions as f64).collect();
        states.push(template.with_sizes(m));
    }
    states.push(template.with_sizes(vec![1.0 / n as f64; n]));
    states
}

/// `sup_{m, x} min_i c_i(x, m)` over interior probe states: the largest cost
/// an agent can be forced to bear while choosing optimally.
pub fn sup_inf_cost(model: &CostModel, measure: &SampledMeasure, template: &NominalState) -> f64 {
    let n = model.communities;
    let probe_floor = (0.01 / n as f64).min(1e-3);
    let mut worst = f64::NEG_INFINITY;
    for state in probe_states(n, probe_floor, template) {
        for s in measure.samples() {
            let best =
                (0..n).map(|i| model.cost_unchecked(s.type_index, i, s.point, &state)).fold(f64::INFINITY, f64::min);
            worst = worst.max(best);
        }
    }
    worst
}

/// For each community, the largest size `m0_i` below which every sampled
/// agent pays more than `bound` in community `i`, whatever the other sizes.
///
/// Requires `bound` above [`sup_inf_cost`]; then communities smaller than
/// their floor attract nobody.
pub fn small_group_floor(
    model: &CostModel,
    measure: &SampledMeasure,
    bound: f64,
    template: &NominalState,
) -> Result<Vec<f64>> {
    let n = model.communities;
    let attainable = sup_inf_cost(model, measure, template);
    if !(bound > attainable) {
        return Err(Error::Invalid(format!("cost bound {bound} does not exceed attainable cost {attainable}")));
    }
    let cap = 1.0 / n as f64;
    let mut floors = Vec::with_capacity(n);
    for i in 0..n {
        // admissible others: face vertices and their barycenter
        let others: Vec<usize> = (0..n).filter(|&h| h != i).collect();
        let min_cost = |mi: f64| -> f64 {
            let rest = 1.0 - mi;
            let mut configs: Vec<Vec<f64>> = others
                .iter()
                .map(|&h| {
                    let mut m = vec![0.0; n];
                    m[h] = rest;
                    m
                })
                .collect();
            if others.len() > 1 {
                let mut m = vec![rest / others.len() as f64; n];
                m[i] = 0.0;
                configs.push(m);
            }
            if configs.is_empty() {
                configs.push(vec![0.0; n]);
            }
            let mut lowest = f64::INFINITY;
            for mut m in configs {
                m[i] = mi;
                let state = template.with_sizes(m);
                for s in measure.samples() {
                    lowest = lowest.min(model.cost_at_size(s.type_index, i, s.point, &state, mi));
                }
            }
            lowest
        };
        let mut lo = 1e-12;
        if min_cost(lo) <= bound {
            return Err(Error::AssumptionViolated {
                community: i,
                reason: format!("costs stay at or below {bound} as the community shrinks to zero"),
            });
        }
        let mut hi = cap;
        if min_cost(hi) > bound {
            floors.push(hi);
            continue;
        }
        while hi - lo > 1e-12 + 1e-9 * lo {
            let mid = 0.5 * (lo + hi);
            if min_cost(mid) > bound {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        floors.push(lo);
    }
    Ok(floors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{build_grid_measure, Population, TypeSpace};

    fn sq2(g: f64) -> CostModel {
        CostModel::metric_fixed_share(vec![vec![0.25, 0.5], vec![0.75, 0.5]], g, 1.0)
    }

    fn state(m: &[f64]) -> NominalState {
        NominalState::sizes(m.to_vec(), 1e-3)
    }

    #[test]
    fn benchmark_cost_values() {
        let model = sq2(0.05);
        let s = state(&[0.5, 0.5]);
        assert!((model.eval_cost(0, 0, &[0.25, 0.5], &s).unwrap() - 0.1).abs() < 1e-15);
        assert!((model.eval_cost(0, 0, &[0.5, 0.5], &s).unwrap() - 0.35).abs() < 1e-15);
        let flat = CostModel::metric_fixed_share(vec![vec![0.25, 0.5], vec![0.75, 0.5]], 0.05, 0.0);
        for x in [[0.0, 0.0], [0.9, 0.3]] {
            assert!((flat.eval_cost(0, 1, &x, &s).unwrap() - 0.1).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_size_is_rejected() {
        let model = sq2(0.05);
        let s = NominalState::sizes(vec![0.0, 1.0], 1e-3);
        assert_eq!(model.eval_cost(0, 0, &[0.1, 0.1], &s), Err(Error::ZeroSizeCommunity { community: 0 }));
        assert!(model.dcost_dm(0, 0, &[0.1, 0.1], &s).is_err());
    }

    #[test]
    fn metric_gradient_is_unit_vector() {
        let model = CostModel::metric_fixed_share(vec![vec![0.0, 0.0]], 0.05, 1.0);
        let g = model.grad_x(0, 0, &[0.3, 0.4], &state(&[1.0])).unwrap();
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
        assert_eq!(model.grad_x(0, 0, &[0.0, 0.0], &state(&[1.0])), Err(Error::SingularPoint { community: 0 }));
        let flat = CostModel::metric_fixed_share(vec![vec![0.0, 0.0]], 0.05, 0.0);
        assert_eq!(flat.grad_x(0, 0, &[0.3, 0.4], &state(&[1.0])).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn central_difference_matches_quadratic() {
        let model = CostModel {
            communities: 1,
            terms: vec![CostTerm::Quadratic { centers: vec![vec![0.0, 0.0]], scale: 1.0 }.into()],
            gradient: GradientMode::CentralDifference { h_x: 1e-5, h_m: 1e-5 },
        };
        let g = model.grad_x(0, 0, &[1.0, 2.0], &state(&[1.0])).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-6 && (g[1] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn size_derivative() {
        let model = sq2(0.05);
        assert!((model.dcost_dm(0, 0, &[0.1, 0.1], &state(&[0.5, 0.5])).unwrap() + 0.2).abs() < 1e-15);
        assert!((model.dcost_dm(0, 0, &[0.1, 0.1], &state(&[0.25, 0.75])).unwrap() + 0.8).abs() < 1e-15);
        let s = state(&[0.3, 0.7]);
        let a = model.dcost_dm(0, 1, &[0.0, 0.0], &s).unwrap();
        let b = model.dcost_dm(0, 1, &[0.9, 0.2], &s).unwrap();
        assert_eq!(a, b);
        let fd = CostModel { gradient: GradientMode::CentralDifference { h_x: 1e-5, h_m: 1e-5 }, ..sq2(0.05) };
        assert!((fd.dcost_dm(0, 0, &[0.1, 0.1], &state(&[0.5, 0.5])).unwrap() + 0.2).abs() < 1e-8);
    }

    #[test]
    fn flags_track_terms() {
        assert!(sq2(0.1).flags().separable);
        let spill = sq2(0.1).with_term(CostTerm::Spillover { coefficient: 0.3 });
        let f = spill.flags();
        assert!(!f.separable && f.depends_on_other_sizes);
    }

    #[test]
    fn gap_measure_converges_on_square() {
        let mu = build_grid_measure(&Population::single(TypeSpace::unit_cube(2)), 100).unwrap();
        let model = sq2(0.05);
        let s = state(&[0.5, 0.5]);
        let slope = indifference_gap_measure(&model, &mu, &s, 0, 1, 1e-4) / 1e-4;
        assert!((slope - 0.7395).abs() < 0.02, "{slope}");
        assert_eq!(indifference_gap_measure(&model, &mu, &s, 0, 1, 0.0), 0.0);
        let wide = indifference_gap_measure(&model, &mu, &s, 0, 1, 0.1);
        let narrow = indifference_gap_measure(&model, &mu, &s, 0, 1, 0.01);
        assert!(wide >= narrow);
    }

    #[test]
    fn floor_inverts_share_term() {
        let mu = build_grid_measure(&Population::single(TypeSpace::unit_cube(2)), 50).unwrap();
        let model = sq2(0.05);
        let floors = small_group_floor(&model, &mu, 10.0, &state(&[0.5, 0.5])).unwrap();
        // oracle: g / (A - closest sampled distance to the center)
        for (i, c) in [[0.25, 0.5], [0.75, 0.5]].iter().enumerate() {
            let nearest = mu.samples().map(|s| crate::geometry::distance(s.point, c)).fold(f64::INFINITY, f64::min);
            let expected = 0.05 / (10.0 - nearest);
            assert!((floors[i] - expected).abs() < 1e-6, "{} vs {expected}", floors[i]);
        }
    }

    #[test]
    fn floor_requires_divergence() {
        let mu = build_grid_measure(&Population::single(TypeSpace::unit_cube(1)), 20).unwrap();
        let constant = CostModel {
            communities: 2,
            terms: vec![CostTerm::Offset { values: PerCommunity::Uniform(1.0) }.into()],
            gradient: GradientMode::Analytic,
        };
        let err = small_group_floor(&constant, &mu, 5.0, &state(&[0.5, 0.5])).unwrap_err();
        assert!(matches!(err, Error::AssumptionViolated { .. }));
        let no_share = CostModel::metric_fixed_share(vec![vec![0.0], vec![1.0]], 0.0, 1.0);
        let err = small_group_floor(&no_share, &mu, 5.0, &state(&[0.5, 0.5])).unwrap_err();
        assert!(matches!(err, Error::AssumptionViolated { .. }));
    }
}
