//! Non-atomic agent distributions and their quadrature representation.
//!
//! A [`Population`] lists one [`TypeSpace`] per agent type. Sampling it
//! yields a [`SampledMeasure`]: weighted points whose weights sum to the
//! type's mass share, so that the whole population has mass exactly one.
//! Grid measures also remember the cell each point stands for, which the
//! partition code uses to split border cells between communities.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Membership test restricting the bounding box of a type space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Region {
    Ball { center: Vec<f64>, radius: f64 },
    HalfSpace { normal: Vec<f64>, offset: f64 },
}

impl Region {
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Region::Ball { center, radius } => {
                x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() <= radius * radius
            }
            Region::HalfSpace { normal, offset } => x.iter().zip(normal).map(|(a, b)| a * b).sum::<f64>() <= *offset,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityPiece {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub value: f64,
}

/// Unnormalized density on the bounding box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Density {
    #[default]
    Uniform,
    /// Constant on each listed sub-box (later pieces win), `background`
    /// elsewhere.
    PiecewiseConstant {
        pieces: Vec<DensityPiece>,
        #[serde(default)]
        background: f64,
    },
    /// Values on a regular node grid spanning the box, multilinearly
    /// interpolated. `values` is ordered with the first axis fastest.
    Tabulated { nodes_per_axis: Vec<usize>, values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeSpace {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    #[serde(default)]
    pub predicate: Option<Region>,
    #[serde(default)]
    pub density: Density,
    #[serde(default = "one")]
    pub mass_share: f64,
}

fn one() -> f64 {
    1.0
}

impl TypeSpace {
    pub fn uniform_box(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        Self { lower, upper, predicate: None, density: Density::Uniform, mass_share: 1.0 }
    }

    pub fn unit_cube(dimension: usize) -> Self {
        Self::uniform_box(vec![0.0; dimension], vec![1.0; dimension])
    }

    pub fn with_predicate(mut self, region: Region) -> Self {
        self.predicate = Some(region);
        self
    }

    pub fn dimension(&self) -> usize {
        self.lower.len()
    }

    pub fn in_support(&self, x: &[f64]) -> bool {
        let in_box = x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (lo, hi))| *v >= *lo && *v <= *hi);
        in_box && self.predicate.as_ref().is_none_or(|p| p.contains(x))
    }

    /// Unnormalized density, zero off the support.
    pub fn raw_density(&self, x: &[f64]) -> f64 {
        if !self.in_support(x) {
            return 0.0;
        }
        match &self.density {
            Density::Uniform => 1.0,
            Density::PiecewiseConstant { pieces, background } => pieces
                .iter()
                .rev()
                .find(|p| x.iter().zip(p.lower.iter().zip(&p.upper)).all(|(v, (lo, hi))| *v >= *lo && *v <= *hi))
                .map_or(*background, |p| p.value),
            Density::Tabulated { nodes_per_axis, values } => self.interpolate(nodes_per_axis, values, x),
        }
    }

    fn interpolate(&self, nodes: &[usize], values: &[f64], x: &[f64]) -> f64 {
        let k = self.dimension();
        let mut base = vec![0usize; k];
        let mut frac = vec![0.0; k];
        for d in 0..k {
            let cells = (nodes[d] - 1) as f64;
            let t = ((x[d] - self.lower[d]) / (self.upper[d] - self.lower[d]) * cells).clamp(0.0, cells);
            let b = (t.floor() as usize).min(nodes[d].saturating_sub(2));
            base[d] = b;
            frac[d] = t - b as f64;
        }
        let mut total = 0.0;
        for corner in 0..(1usize << k) {
            let mut weight = 1.0;
            let mut index = 0;
            let mut stride = 1;
            for d in 0..k {
                let up = (corner >> d) & 1;
                weight *= if up == 1 { frac[d] } else { 1.0 - frac[d] };
                index += (base[d] + up).min(nodes[d] - 1) * stride;
                stride *= nodes[d];
            }
            if weight > 0.0 {
                total += weight * values[index];
            }
        }
        total
    }

    fn max_density(&self) -> f64 {
        match &self.density {
            Density::Uniform => 1.0,
            Density::PiecewiseConstant { pieces, background } => {
                pieces.iter().map(|p| p.value).fold(*background, f64::max)
            }
            Density::Tabulated { values, .. } => values.iter().copied().fold(0.0, f64::max),
        }
    }

    fn box_volume(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(lo, hi)| hi - lo).product()
    }

    pub fn validate(&self, type_index: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::Invalid(format!("type {type_index}: {msg}")));
        if self.lower.is_empty() || self.lower.len() != self.upper.len() {
            return bad("bounds must be non-empty and of equal length".into());
        }
        if self.lower.iter().zip(&self.upper).any(|(lo, hi)| !(hi > lo)) {
            return bad("support box has empty interior".into());
        }
        if !(self.mass_share > 0.0 && self.mass_share <= 1.0) {
            return bad(format!("mass share {} outside (0, 1]", self.mass_share));
        }
        match &self.density {
            Density::Uniform => {}
            Density::PiecewiseConstant { pieces, background } => {
                if *background < 0.0 || pieces.iter().any(|p| p.value < 0.0 || p.lower.len() != self.dimension()) {
                    return bad("piecewise density must be nonnegative with matching dimensions".into());
                }
            }
            Density::Tabulated { nodes_per_axis, values } => {
                if nodes_per_axis.len() != self.dimension() || nodes_per_axis.iter().any(|&n| n < 2) {
                    return bad("tabulated density needs >= 2 nodes on every axis".into());
                }
                if values.len() != nodes_per_axis.iter().product::<usize>() || values.iter().any(|v| *v < 0.0) {
                    return bad("tabulated density values must be nonnegative and match the node grid".into());
                }
            }
        }
        Ok(())
    }
}

/// The agent population: one type space per agent type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub types: Vec<TypeSpace>,
}

impl Population {
    pub fn single(space: TypeSpace) -> Self {
        Self { types: vec![space] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.types.is_empty() {
            return Err(Error::Invalid("population has no agent types".into()));
        }
        for (j, t) in self.types.iter().enumerate() {
            t.validate(j)?;
        }
        let total: f64 = self.types.iter().map(|t| t.mass_share).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid(format!("type mass shares sum to {total}, expected 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Provenance {
    Grid { cells_per_axis: usize },
    MonteCarlo { samples: usize, seed: u64 },
}

/// Samples of one agent type.
#[derive(Debug, Clone)]
pub struct TypeSample {
    pub space: TypeSpace,
    /// Flat coordinates, `dimension` values per point.
    pub coords: Vec<f64>,
    pub weights: Vec<f64>,
    /// Half-widths of the quadrature cell of every point (grid measures).
    pub cell_half_widths: Option<Vec<f64>>,
    /// Factor turning the raw density into the normalized one.
    pub density_scale: f64,
    /// Mass of the support before normalization, relative to the box.
    pub raw_box_fraction: f64,
}

impl TypeSample {
    pub fn dimension(&self) -> usize {
        self.space.dimension()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, s: usize) -> &[f64] {
        let k = self.dimension();
        &self.coords[s * k..(s + 1) * k]
    }
}

/// A sample point viewed through the global index.
#[derive(Debug, Clone, Copy)]
pub struct SamplePoint<'a> {
    pub index: usize,
    pub type_index: usize,
    pub point: &'a [f64],
    pub weight: f64,
}

/// Quadrature stand-in for the agent distribution. Immutable after
/// construction.
#[derive(Debug, Clone)]
pub struct SampledMeasure {
    pub types: Vec<TypeSample>,
    pub provenance: Provenance,
    offsets: Vec<usize>,
}

impl SampledMeasure {
    fn from_types(types: Vec<TypeSample>, provenance: Provenance) -> Self {
        let mut offsets = Vec::with_capacity(types.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for t in &types {
            acc += t.len();
            offsets.push(acc);
        }
        Self { types, provenance, offsets }
    }

    pub fn len(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn type_count(&self) -> usize {
        self.types.len()
    }

    /// Type index and local index of a global sample index.
    pub fn locate(&self, index: usize) -> (usize, usize) {
        let j = self.offsets.partition_point(|&o| o <= index) - 1;
        (j, index - self.offsets[j])
    }

    pub fn type_range(&self, j: usize) -> std::ops::Range<usize> {
        self.offsets[j]..self.offsets[j + 1]
    }

    pub fn sample(&self, index: usize) -> SamplePoint<'_> {
        let (j, s) = self.locate(index);
        let t = &self.types[j];
        SamplePoint { index, type_index: j, point: t.point(s), weight: t.weights[s] }
    }

    pub fn samples(&self) -> impl Iterator<Item = SamplePoint<'_>> + '_ {
        self.types.iter().enumerate().flat_map(move |(j, t)| {
            let base = self.offsets[j];
            (0..t.len()).map(move |s| SamplePoint {
                index: base + s,
                type_index: j,
                point: t.point(s),
                weight: t.weights[s],
            })
        })
    }

    pub fn total_mass(&self) -> f64 {
        self.types.iter().flat_map(|t| t.weights.iter()).sum()
    }

    /// Normalized density of type `j` at `x`.
    pub fn density(&self, j: usize, x: &[f64]) -> f64 {
        let t = &self.types[j];
        t.density_scale * t.space.raw_density(x)
    }

    /// Largest Euclidean distance between two support points of type `j`
    /// (bounding-box diagonal).
    pub fn diameter(&self, j: usize) -> f64 {
        let s = &self.types[j].space;
        s.lower.iter().zip(&s.upper).map(|(lo, hi)| (hi - lo) * (hi - lo)).sum::<f64>().sqrt()
    }

    /// CSV debug dump with columns `type,j,x_1..x_k,w`.
    pub fn to_csv(&self) -> String {
        let kmax = self.types.iter().map(|t| t.dimension()).max().unwrap_or(0);
        let mut out = String::from("type,j");
        for d in 1..=kmax {
            let _ = write!(out, ",x_{d}");
        }
        out.push_str(",w\n");
        for (j, t) in self.types.iter().enumerate() {
            for s in 0..t.len() {
                let _ = write!(out, "{j},{s}");
                let p = t.point(s);
                for d in 0..kmax {
                    match p.get(d) {
                        Some(v) => {
                            let _ = write!(out, ",{v}");
                        }
                        None => out.push(','),
                    }
                }
                let _ = writeln!(out, ",{}", t.weights[s]);
            }
        }
        out
    }
}

/// Midpoint-rule quadrature: one point per cell whose midpoint lies in the
/// support, weighted by density times cell volume, normalized to the type's
/// mass share.
pub fn build_grid_measure(population: &Population, cells_per_axis: usize) -> Result<SampledMeasure> {
    population.validate()?;
    if cells_per_axis < 2 {
        return Err(Error::Invalid("cells_per_axis must be at least 2".into()));
    }
    let mut types = Vec::with_capacity(population.types.len());
    for (j, space) in population.types.iter().enumerate() {
        let k = space.dimension();
        let widths: Vec<f64> = (0..k).map(|d| (space.upper[d] - space.lower[d]) / cells_per_axis as f64).collect();
        let cell_volume: f64 = widths.iter().product();
        let total_cells =
            cells_per_axis.checked_pow(k as u32).ok_or_else(|| Error::Invalid("grid too large".into()))?;
        let mut coords = Vec::new();
        let mut weights = Vec::new();
        let mut midpoint = vec![0.0; k];
        for cell in 0..total_cells {
            let mut rest = cell;
            for d in 0..k {
                let c = rest % cells_per_axis;
                rest /= cells_per_axis;
                midpoint[d] = space.lower[d] + (c as f64 + 0.5) * widths[d];
            }
            let w = space.raw_density(&midpoint) * cell_volume;
            if w > 0.0 {
                coords.extend_from_slice(&midpoint);
                weights.push(w);
            }
        }
        if weights.is_empty() {
            return Err(Error::SupportEmpty { type_index: j });
        }
        let raw: f64 = weights.iter().sum();
        let scale = space.mass_share / raw;
        weights.iter_mut().for_each(|w| *w *= scale);
        types.push(TypeSample {
            space: space.clone(),
            coords,
            weights,
            cell_half_widths: Some(widths.iter().map(|w| 0.5 * w).collect()),
            density_scale: scale,
            raw_box_fraction: raw / space.box_volume(),
        });
    }
    Ok(SampledMeasure::from_types(types, Provenance::Grid { cells_per_axis }))
}

/// `n` i.i.d. draws per type by rejection inside the bounding box, equal
/// weights. Reproducible for a fixed seed.
pub fn build_monte_carlo_measure(population: &Population, n: usize, seed: u64) -> Result<SampledMeasure> {
    population.validate()?;
    if n == 0 {
        return Err(Error::Invalid("sample count must be positive".into()));
    }
    const MIN_ACCEPTANCE: f64 = 1e-4;
    const WARMUP_TRIALS: usize = 100_000;
    let mut types = Vec::with_capacity(population.types.len());
    for (j, space) in population.types.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(j as u64);
        let k = space.dimension();
        let ceiling = space.max_density();
        if !(ceiling > 0.0) {
            return Err(Error::SupportEmpty { type_index: j });
        }
        let mut coords = Vec::with_capacity(n * k);
        let mut accepted = 0usize;
        let mut trials = 0usize;
        let mut x = vec![0.0; k];
        while accepted < n {
            trials += 1;
            for d in 0..k {
                x[d] = rng.random_range(space.lower[d]..space.upper[d]);
            }
            let u: f64 = rng.random();
            if u * ceiling < space.raw_density(&x) {
                coords.extend_from_slice(&x);
                accepted += 1;
            }
            if trials >= WARMUP_TRIALS && (accepted as f64) < MIN_ACCEPTANCE * trials as f64 {
                return Err(Error::RejectionRateExceeded { type_index: j, rate: accepted as f64 / trials as f64 });
            }
        }
        let acceptance = accepted as f64 / trials as f64;
        let raw_mass = space.box_volume() * ceiling * acceptance;
        types.push(TypeSample {
            space: space.clone(),
            coords,
            weights: vec![space.mass_share / n as f64; n],
            cell_half_widths: None,
            density_scale: space.mass_share / raw_mass,
            raw_box_fraction: ceiling * acceptance,
        });
    }
    Ok(SampledMeasure::from_types(types, Provenance::MonteCarlo { samples: n, seed }))
}

/// Sum of weights of the samples satisfying `predicate(type, x)`.
pub fn measure_of(measure: &SampledMeasure, predicate: impl Fn(usize, &[f64]) -> bool) -> f64 {
    measure.samples().filter(|s| predicate(s.type_index, s.point)).map(|s| s.weight).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_interval() -> Population {
        Population::single(TypeSpace::unit_cube(1))
    }

    #[test]
    fn grid_on_interval() {
        let m = build_grid_measure(&unit_interval(), 4).unwrap();
        let xs: Vec<f64> = m.samples().map(|s| s.point[0]).collect();
        assert_eq!(xs, vec![0.125, 0.375, 0.625, 0.875]);
        assert!(m.samples().all(|s| (s.weight - 0.25).abs() < 1e-15));
    }

    #[test]
    fn grid_on_square() {
        let m = build_grid_measure(&Population::single(TypeSpace::unit_cube(2)), 2).unwrap();
        assert_eq!(m.len(), 4);
        assert!(m.samples().all(|s| (s.weight - 0.25).abs() < 1e-15));
    }

    #[test]
    fn disk_predicate_mass() {
        let space = TypeSpace::uniform_box(vec![-1.0, -1.0], vec![1.0, 1.0])
            .with_predicate(Region::Ball { center: vec![0.0, 0.0], radius: 1.0 });
        let m = build_grid_measure(&Population::single(space), 100).unwrap();
        assert!((m.total_mass() - 1.0).abs() < 1e-12);
        let ratio = m.types[0].raw_box_fraction;
        assert!((ratio - std::f64::consts::FRAC_PI_4).abs() < 0.01, "{ratio}");
    }

    #[test]
    fn empty_support_is_an_error() {
        let space = TypeSpace::unit_cube(2).with_predicate(Region::Ball { center: vec![5.0, 5.0], radius: 0.1 });
        assert_eq!(
            build_grid_measure(&Population::single(space), 10).unwrap_err(),
            Error::SupportEmpty { type_index: 0 }
        );
    }

    #[test]
    fn grid_rejects_single_cell() {
        assert!(build_grid_measure(&unit_interval(), 1).is_err());
    }

    #[test]
    fn monte_carlo_mean_and_determinism() {
        let a = build_monte_carlo_measure(&unit_interval(), 1000, 7).unwrap();
        let b = build_monte_carlo_measure(&unit_interval(), 1000, 7).unwrap();
        assert_eq!(a.types[0].coords, b.types[0].coords);
        let mean: f64 = a.types[0].coords.iter().sum::<f64>() / 1000.0;
        assert!((mean - 0.5).abs() < 0.05);
    }

    #[test]
    fn monte_carlo_single_point() {
        let m = build_monte_carlo_measure(&unit_interval(), 1, 3).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.types[0].weights, vec![1.0]);
    }

    #[test]
    fn tiny_support_exceeds_rejection_budget() {
        let space = TypeSpace::unit_cube(2).with_predicate(Region::Ball { center: vec![0.5, 0.5], radius: 1e-4 });
        let err = build_monte_carlo_measure(&Population::single(space), 10, 1).unwrap_err();
        assert!(matches!(err, Error::RejectionRateExceeded { .. }));
    }

    #[test]
    fn measure_of_basics() {
        let m = build_grid_measure(&Population::single(TypeSpace::unit_cube(2)), 100).unwrap();
        assert!((measure_of(&m, |_, _| true) - 1.0).abs() < 1e-12);
        assert_eq!(measure_of(&m, |_, _| false), 0.0);
        assert!((measure_of(&m, |_, x| x[0] < 0.5) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn piecewise_density_shifts_mass() {
        let space = TypeSpace {
            density: Density::PiecewiseConstant {
                pieces: vec![DensityPiece { lower: vec![0.0], upper: vec![0.5], value: 3.0 }],
                background: 1.0,
            },
            ..TypeSpace::unit_cube(1)
        };
        let m = build_grid_measure(&Population::single(space), 100).unwrap();
        assert!((measure_of(&m, |_, x| x[0] < 0.5) - 0.75).abs() < 1e-12);
        assert!((m.density(0, &[0.25]) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn tabulated_density_interpolates() {
        let space = TypeSpace {
            density: Density::Tabulated { nodes_per_axis: vec![2], values: vec![0.0, 2.0] },
            ..TypeSpace::unit_cube(1)
        };
        let m = build_grid_measure(&Population::single(space), 1000).unwrap();
        // density 2x on [0,1]
        assert!((measure_of(&m, |_, x| x[0] < 0.5) - 0.25).abs() < 1e-9);
    }

    #[test]
    fn multi_type_masses_and_locate() {
        let pop = Population {
            types: vec![
                TypeSpace { mass_share: 0.25, ..TypeSpace::unit_cube(1) },
                TypeSpace { mass_share: 0.75, ..TypeSpace::unit_cube(2) },
            ],
        };
        let m = build_grid_measure(&pop, 10).unwrap();
        assert_eq!(m.len(), 110);
        assert_eq!(m.locate(9), (0, 9));
        assert_eq!(m.locate(10), (1, 0));
        assert!((measure_of(&m, |j, _| j == 1) - 0.75).abs() < 1e-12);
        assert!(m.to_csv().starts_with("type,j,x_1,x_2,w\n0,0,0.05,,"));
    }
}
