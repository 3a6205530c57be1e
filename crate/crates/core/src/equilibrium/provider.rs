//! Provider utilities and best responses over feasible boxes.
//!
//! Providers take their own community's sizes and characteristics as given
//! when choosing parameters.

use serde::{Deserialize, Serialize};

use super::ProviderSettings;
use crate::error::{Error, Result};
use crate::partition::NominalState;

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum UtilityTerm {
    /// `-weight * sum_d (z[offset + d] - v[characteristics[d]])^2`.
    TrackCharacteristic {
        #[serde(default)]
        offset: usize,
        characteristics: Vec<usize>,
        #[serde(default = "one")]
        weight: f64,
    },
    /// `coefficient * z[index] * m_i`, e.g. fee revenue.
    Revenue {
        #[serde(default)]
        index: usize,
        #[serde(default = "one")]
        coefficient: f64,
    },
    /// `-coefficient * z[index]^2`.
    QuadraticCost {
        #[serde(default)]
        index: usize,
        #[serde(default = "one")]
        coefficient: f64,
    },
    /// `coefficient * z[index]`.
    Linear {
        #[serde(default)]
        index: usize,
        coefficient: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibleBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl FeasibleBox {
    pub fn unit(dimension: usize) -> Self {
        Self { lower: vec![0.0; dimension], upper: vec![1.0; dimension] }
    }

    pub fn dimension(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.len() != self.upper.len() || self.lower.iter().zip(&self.upper).any(|(l, u)| !(l <= u))
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect()
    }

    pub fn clamp(&self, z: &[f64]) -> Vec<f64> {
        (0..self.dimension())
            .map(|d| z.get(d).copied().unwrap_or(self.lower[d]).clamp(self.lower[d], self.upper[d]))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provider {
    pub utility: Vec<UtilityTerm>,
    pub feasible: FeasibleBox,
    /// Starting parameters; the box midpoint when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<Vec<f64>>,
}

impl Provider {
    pub fn utility(&self, i: usize, z: &[f64], state: &NominalState) -> f64 {
        let v = &state.v[i];
        let m = state.m[i];
        self.utility
            .iter()
            .map(|t| match t {
                UtilityTerm::TrackCharacteristic { offset, characteristics, weight } => {
                    -weight
                        * characteristics
                            .iter()
                            .enumerate()
                            .map(|(d, &l)| {
                                let gap = z[offset + d] - v[l];
                                gap * gap
                            })
                            .sum::<f64>()
                }
                UtilityTerm::Revenue { index, coefficient } => coefficient * z[*index] * m,
                UtilityTerm::QuadraticCost { index, coefficient } => -coefficient * z[*index] * z[*index],
                UtilityTerm::Linear { index, coefficient } => coefficient * z[*index],
            })
            .sum()
    }

    pub fn initial_parameters(&self) -> Vec<f64> {
        match &self.initial {
            Some(z) => self.feasible.clamp(z),
            None => self.feasible.midpoint(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ProviderSpec {
    pub providers: Vec<Provider>,
}

impl ProviderSpec {
    /// Checks shapes against the community count and characteristic counts.
    pub fn validate(&self, n: usize, characteristic_counts: &[usize]) -> Result<()> {
        if self.providers.len() != n {
            return Err(Error::Invalid(format!("expected {n} providers, got {}", self.providers.len())));
        }
        for (i, p) in self.providers.iter().enumerate() {
            if p.feasible.is_empty() {
                return Err(Error::EmptyFeasibleSet { provider: i });
            }
            if p.feasible.lower.iter().any(|&l| l < 0.0) || p.feasible.upper.iter().any(|&u| u > 1.0) {
                return Err(Error::Invalid(format!("provider {i}: feasible box must lie in [0, 1]")));
            }
            let d = p.feasible.dimension();
            for t in &p.utility {
                let ok = match t {
                    UtilityTerm::TrackCharacteristic { offset, characteristics, .. } => {
                        offset + characteristics.len() <= d
                            && characteristics.iter().all(|&l| l < characteristic_counts.get(i).copied().unwrap_or(0))
                    }
                    UtilityTerm::Revenue { index, .. }
                    | UtilityTerm::QuadraticCost { index, .. }
                    | UtilityTerm::Linear { index, .. } => *index < d,
                };
                if !ok {
                    return Err(Error::Invalid(format!("provider {i}: utility term refers outside its parameters")));
                }
            }
        }
        Ok(())
    }
}

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Maximizes a quasi-concave `phi` on `[lo, hi]`, checking both endpoints.
fn golden_section(phi: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> f64 {
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (phi(c), phi(d));
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = phi(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = phi(d);
        }
    }
    let mid = 0.5 * (a + b);
    [lo, hi, mid].into_iter().fold(mid, |best, t| if phi(t) > phi(best) { t } else { best })
}

/// Coordinate-wise golden-section ascent of provider `i`'s utility over its
/// feasible box, started from the current parameters.
pub fn provider_best_response(
    spec: &ProviderSpec,
    i: usize,
    state: &NominalState,
    settings: &ProviderSettings,
) -> Result<Vec<f64>> {
    let provider = spec.providers.get(i).ok_or(Error::Invalid(format!("no provider {i}")))?;
    let bounds = &provider.feasible;
    if bounds.is_empty() {
        return Err(Error::EmptyFeasibleSet { provider: i });
    }
    let mut z = bounds.clamp(&state.z[i]);
    let mut value = provider.utility(i, &z, state);
    for _ in 0..settings.max_sweeps {
        let before = value;
        for d in 0..z.len() {
            let t = golden_section(
                |t| {
                    let mut probe = z.clone();
                    probe[d] = t;
                    provider.utility(i, &probe, state)
                },
                bounds.lower[d],
                bounds.upper[d],
                settings.line_search_tolerance,
            );
            let mut candidate = z.clone();
            candidate[d] = t;
            let u = provider.utility(i, &candidate, state);
            if u > value {
                z = candidate;
                value = u;
            }
        }
        if value - before <= settings.line_search_tolerance {
            break;
        }
    }
    Ok(z)
}

/// Utility gain available to provider `i` over its current parameters,
/// probed on a grid of the feasible box and at the golden-section optimum.
pub fn provider_regret(
    spec: &ProviderSpec,
    i: usize,
    state: &NominalState,
    settings: &ProviderSettings,
) -> Result<f64> {
    let provider = spec.providers.get(i).ok_or(Error::Invalid(format!("no provider {i}")))?;
    let bounds = &provider.feasible;
    if bounds.is_empty() {
        return Err(Error::EmptyFeasibleSet { provider: i });
    }
    let current = provider.utility(i, &state.z[i], state);
    let d = bounds.dimension();
    let per_axis = if d <= 2 { settings.probe_points.max(2) } else { 5 };
    let total = per_axis.pow(d as u32);
    let mut best = f64::NEG_INFINITY;
    let mut z = vec![0.0; d];
    for k in 0..total {
        let mut rest = k;
        for a in 0..d {
            let step = rest % per_axis;
            rest /= per_axis;
            z[a] = bounds.lower[a] + (bounds.upper[a] - bounds.lower[a]) * step as f64 / (per_axis - 1) as f64;
        }
        best = best.max(provider.utility(i, &z, state));
    }
    let response = provider_best_response(spec, i, state, settings)?;
    best = best.max(provider.utility(i, &response, state));
    Ok((best - current).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tracking(bounds: FeasibleBox) -> ProviderSpec {
        ProviderSpec {
            providers: vec![Provider {
                utility: vec![UtilityTerm::TrackCharacteristic { offset: 0, characteristics: vec![0, 1], weight: 1.0 }],
                feasible: bounds,
                initial: None,
            }],
        }
    }

    fn state(v: Vec<f64>, z: Vec<f64>, m: f64) -> NominalState {
        NominalState { m: vec![m], v: vec![v], z: vec![z], epsilon: 1e-3 }
    }

    #[test]
    fn unconstrained_quadratic() {
        let spec = tracking(FeasibleBox::unit(2));
        let z = provider_best_response(&spec, 0, &state(vec![0.25, 0.5], vec![0.9, 0.1], 1.0), &Default::default())
            .unwrap();
        assert!((z[0] - 0.25).abs() < 1e-8 && (z[1] - 0.5).abs() < 1e-8, "{z:?}");
    }

    #[test]
    fn box_projection() {
        let spec = tracking(FeasibleBox { lower: vec![0.4, 0.0], upper: vec![1.0, 1.0] });
        let z = provider_best_response(&spec, 0, &state(vec![0.25, 0.5], vec![0.9, 0.9], 1.0), &Default::default())
            .unwrap();
        assert!((z[0] - 0.4).abs() < 1e-12 && (z[1] - 0.5).abs() < 1e-8, "{z:?}");
    }

    #[test]
    fn fee_first_order_condition() {
        let spec = ProviderSpec {
            providers: vec![Provider {
                utility: vec![
                    UtilityTerm::Revenue { index: 0, coefficient: 1.0 },
                    UtilityTerm::QuadraticCost { index: 0, coefficient: 1.0 },
                ],
                feasible: FeasibleBox::unit(1),
                initial: None,
            }],
        };
        let st = state(vec![], vec![0.0], 0.5);
        let z = provider_best_response(&spec, 0, &st, &Default::default()).unwrap();
        assert!((z[0] - 0.25).abs() < 1e-8);
        let at_optimum = NominalState { z: vec![z], ..st.clone() };
        assert!(provider_regret(&spec, 0, &at_optimum, &Default::default()).unwrap() <= 1e-12);
        assert!(provider_regret(&spec, 0, &st, &Default::default()).unwrap() > 0.06);
    }

    #[test]
    fn empty_box_is_reported() {
        let spec = tracking(FeasibleBox { lower: vec![0.6, 0.0], upper: vec![0.4, 1.0] });
        let err = provider_best_response(&spec, 0, &state(vec![0.2, 0.2], vec![0.5, 0.5], 1.0), &Default::default());
        assert_eq!(err, Err(Error::EmptyFeasibleSet { provider: 0 }));
    }
}
