//! Community characteristics `v^i_l` as integrals of member functionals.

use serde::{Deserialize, Serialize};

use super::{NominalState, Partition};
use crate::error::{Error, Result};
use crate::measure::SampledMeasure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Integrand {
    Constant {
        #[serde(default = "one")]
        value: f64,
    },
    /// Coordinate `axis` of the member's type point.
    Coordinate { axis: usize },
    /// Indicator of agent type `type_index`.
    TypeIndicator { type_index: usize },
    /// Distance from the member to the provider location `z_i[offset..]`.
    DistanceToProvider {
        #[serde(default)]
        offset: usize,
    },
    /// Level-`level` quantile of coordinate `axis` under logistic smoothing
    /// of width `bandwidth`. Always mean-normalized.
    SmoothedQuantile { axis: usize, level: f64, bandwidth: f64 },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    #[default]
    RawIntegral,
    Mean,
}

/// Affine map `(value - lower) / (upper - lower)`, then clamped to [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub lower: f64,
    pub upper: f64,
}

impl Default for Calibration {
    fn default() -> Self {
        Self { lower: 0.0, upper: 1.0 }
    }
}

impl Calibration {
    pub fn apply(&self, value: f64) -> f64 {
        ((value - self.lower) / (self.upper - self.lower)).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacteristicDef {
    pub integrand: Integrand,
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(default)]
    pub calibration: Calibration,
}

impl CharacteristicDef {
    pub fn mean(integrand: Integrand) -> Self {
        Self { integrand, normalization: Normalization::Mean, calibration: Calibration::default() }
    }
}

/// Per-community characteristic definitions. With several agent types the
/// shares of types `2..q` are appended to every community automatically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct CharacteristicsSpec {
    pub communities: Vec<Vec<CharacteristicDef>>,
}

impl CharacteristicsSpec {
    pub fn shared(n: usize, defs: Vec<CharacteristicDef>) -> Self {
        Self { communities: vec![defs; n] }
    }

    /// Definitions for community `i` including the mandatory type shares.
    pub fn resolved(&self, i: usize, type_count: usize) -> Vec<CharacteristicDef> {
        let mut defs = self.communities.get(i).cloned().unwrap_or_default();
        for t in 1..type_count {
            defs.push(CharacteristicDef::mean(Integrand::TypeIndicator { type_index: t }));
        }
        defs
    }

    pub fn is_empty(&self, type_count: usize) -> bool {
        type_count <= 1 && self.communities.iter().all(|c| c.is_empty())
    }
}

fn logistic(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Quadrature of each integrand against the members of every community.
///
/// Mean-normalized characteristics of a community whose realized size is
/// below `epsilon / 2` fail with [`Error::EmptyCommunityMean`].
pub fn realized_characteristics(
    measure: &SampledMeasure,
    partition: &Partition,
    spec: &CharacteristicsSpec,
    state: &NominalState,
) -> Result<Vec<Vec<f64>>> {
    let n = partition.communities();
    let q = measure.type_count();
    let mut out = Vec::with_capacity(n);
    let locations: Vec<(usize, usize, f64, Vec<f64>)> = partition
        .pieces
        .iter()
        .map(|p| (p.community, measure.locate(p.sample).0, p.mass, partition.piece_location(measure, p)))
        .collect();
    for i in 0..n {
        let defs = spec.resolved(i, q);
        let size = partition.sizes[i];
        let members = || locations.iter().filter(move |l| l.0 == i);
        let mut values = Vec::with_capacity(defs.len());
        for def in &defs {
            let mean =
                def.normalization == Normalization::Mean || matches!(def.integrand, Integrand::SmoothedQuantile { .. });
            if mean && size < 0.5 * state.epsilon {
                return Err(Error::EmptyCommunityMean { community: i });
            }
            let value = match &def.integrand {
                Integrand::SmoothedQuantile { axis, level, bandwidth } => {
                    let cdf = |t: f64| {
                        members().map(|(_, _, w, x)| w * logistic((t - x[*axis]) / bandwidth)).sum::<f64>() / size
                    };
                    let (mut lo, mut hi) = members()
                        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), l| (a.min(l.3[*axis]), b.max(l.3[*axis])));
                    lo -= 40.0 * bandwidth;
                    hi += 40.0 * bandwidth;
                    for _ in 0..200 {
                        let mid = 0.5 * (lo + hi);
                        if cdf(mid) < *level {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    0.5 * (lo + hi)
                }
                integrand => {
                    let h = |j: usize, x: &[f64]| -> f64 {
                        match integrand {
                            Integrand::Constant { value } => *value,
                            Integrand::Coordinate { axis } => x[*axis],
                            Integrand::TypeIndicator { type_index } => f64::from(u8::from(j == *type_index)),
                            Integrand::DistanceToProvider { offset } => {
                                crate::geometry::distance(x, &state.z[i][*offset..*offset + x.len()])
                            }
                            Integrand::SmoothedQuantile { .. } => unreachable!(),
                        }
                    };
                    let integral: f64 = members().map(|(_, j, w, x)| w * h(*j, x)).sum();
                    if mean {
                        integral / size
                    } else {
                        integral
                    }
                }
            };
            values.push(def.calibration.apply(value));
        }
        out.push(values);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::CostModel;
    use crate::measure::{build_grid_measure, Population, TypeSpace};
    use crate::partition::assign;

    fn square_halves() -> (SampledMeasure, Partition, NominalState) {
        let mu = build_grid_measure(&Population::single(TypeSpace::unit_cube(2)), 64).unwrap();
        let model = CostModel::metric_fixed_share(vec![vec![0.25, 0.5], vec![0.75, 0.5]], 0.05, 1.0);
        let state = NominalState::sizes(vec![0.5, 0.5], 1e-3);
        let p = assign(&model, &mu, &state);
        (mu, p, state)
    }

    #[test]
    fn centroid_of_left_half() {
        let (mu, p, state) = square_halves();
        let spec = CharacteristicsSpec::shared(2, vec![CharacteristicDef::mean(Integrand::Coordinate { axis: 0 })]);
        let v = realized_characteristics(&mu, &p, &spec, &state).unwrap();
        assert!((v[0][0] - 0.25).abs() < 1e-6, "{:?}", v);
        assert!((v[1][0] - 0.75).abs() < 1e-6);
    }

    #[test]
    fn raw_indicator_is_size() {
        let (mu, p, state) = square_halves();
        let def = CharacteristicDef {
            integrand: Integrand::Constant { value: 1.0 },
            normalization: Normalization::RawIntegral,
            calibration: Calibration::default(),
        };
        let v = realized_characteristics(&mu, &p, &CharacteristicsSpec::shared(2, vec![def]), &state).unwrap();
        assert!((v[0][0] - p.sizes[0]).abs() < 1e-15);
        // with one type, the type-1 share is the size itself
        let share = CharacteristicDef {
            integrand: Integrand::TypeIndicator { type_index: 0 },
            normalization: Normalization::RawIntegral,
            calibration: Calibration::default(),
        };
        let v = realized_characteristics(&mu, &p, &CharacteristicsSpec::shared(2, vec![share]), &state).unwrap();
        assert!((v[1][0] - p.sizes[1]).abs() < 1e-15);
    }

    #[test]
    fn smoothed_median_of_half() {
        let (mu, p, state) = square_halves();
        let def = CharacteristicDef::mean(Integrand::SmoothedQuantile { axis: 0, level: 0.5, bandwidth: 0.01 });
        let v = realized_characteristics(&mu, &p, &CharacteristicsSpec::shared(2, vec![def]), &state).unwrap();
        assert!((v[0][0] - 0.25).abs() < 1e-3, "{}", v[0][0]);
    }

    #[test]
    fn mean_of_empty_community_fails() {
        let mu = build_grid_measure(&Population::single(TypeSpace::unit_cube(1)), 50).unwrap();
        let model = CostModel::metric_fixed_share(vec![vec![0.0], vec![1.0]], 0.1, 1.0);
        let state = NominalState::sizes(vec![0.01, 0.99], 1e-3);
        let p = assign(&model, &mu, &state);
        assert_eq!(p.sizes[0], 0.0);
        let spec = CharacteristicsSpec::shared(2, vec![CharacteristicDef::mean(Integrand::Coordinate { axis: 0 })]);
        assert_eq!(realized_characteristics(&mu, &p, &spec, &state), Err(Error::EmptyCommunityMean { community: 0 }));
    }

    #[test]
    fn type_shares_are_appended() {
        let pop = Population {
            types: vec![
                TypeSpace { mass_share: 0.6, ..TypeSpace::unit_cube(1) },
                TypeSpace { mass_share: 0.4, ..TypeSpace::unit_cube(1) },
            ],
        };
        let mu = build_grid_measure(&pop, 40).unwrap();
        let model = CostModel::metric_fixed_share(vec![vec![0.0], vec![1.0]], 0.1, 1.0);
        let state = NominalState::sizes(vec![0.5, 0.5], 1e-3);
        let p = assign(&model, &mu, &state);
        let v = realized_characteristics(&mu, &p, &CharacteristicsSpec::default(), &state).unwrap();
        assert_eq!(v[0].len(), 1);
        assert!((v[0][0] - 0.4).abs() < 1e-12);
    }
}
