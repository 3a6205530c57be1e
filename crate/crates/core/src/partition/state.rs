use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nominal sizes `m` on the restricted simplex, characteristics `v` and
/// provider parameters `z`, both kept as per-community blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NominalState {
    pub m: Vec<f64>,
    #[serde(default)]
    pub v: Vec<Vec<f64>>,
    #[serde(default)]
    pub z: Vec<Vec<f64>>,
    pub epsilon: f64,
}

impl NominalState {
    /// State of the basic model: sizes only, empty `v` and `z` blocks.
    pub fn sizes(m: Vec<f64>, epsilon: f64) -> Self {
        let n = m.len();
        Self { m, v: vec![Vec::new(); n], z: vec![Vec::new(); n], epsilon }
    }

    pub fn barycenter(n: usize, epsilon: f64) -> Self {
        Self::sizes(vec![1.0 / n as f64; n], epsilon)
    }

    pub fn communities(&self) -> usize {
        self.m.len()
    }

    pub fn with_sizes(&self, m: Vec<f64>) -> Self {
        Self { m, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.m.len();
        if n == 0 {
            return Err(Error::Invalid("state has no communities".into()));
        }
        if !(self.epsilon > 0.0) || (n > 1 && self.epsilon >= 1.0 / n as f64) {
            return Err(Error::Invalid(format!("epsilon {} outside (0, 1/n)", self.epsilon)));
        }
        let total: f64 = self.m.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Invalid(format!("sizes sum to {total}")));
        }
        if self.m.iter().any(|&x| x < self.epsilon * (1.0 - 1e-12)) {
            return Err(Error::Invalid("a nominal size is below the floor epsilon".into()));
        }
        if self.v.len() != n || self.z.len() != n {
            return Err(Error::Invalid("characteristic/provider blocks must have one entry per community".into()));
        }
        if self.v.iter().chain(&self.z).flatten().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::Invalid("characteristics and provider parameters must lie in [0, 1]".into()));
        }
        Ok(())
    }
}
