//! Quadrature cells of grid measures, lifted to the plane.
//!
//! One-dimensional cells become unit-height rectangles so that the same
//! polygon clipping handles both dimensions.

use crate::geometry::{rectangle, Point2};
use crate::measure::SampledMeasure;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Cell {
    pub center: Point2,
    pub half: Point2,
    pub dimension: usize,
}

impl Cell {
    pub fn polygon(&self) -> Vec<Point2> {
        rectangle(self.center, self.half)
    }

    pub fn area(&self) -> f64 {
        4.0 * self.half[0] * self.half[1]
    }

    pub fn lift(&self, v: &[f64]) -> Point2 {
        match self.dimension {
            1 => [v[0], 0.0],
            _ => [v[0], v[1]],
        }
    }

    /// Maximal deviation of a linear function with gradient `g` from its
    /// value at the center.
    pub fn spread(&self, g: Point2) -> f64 {
        g[0].abs() * self.half[0] + g[1].abs() * self.half[1]
    }

    /// Back from the lifted plane to type-space coordinates.
    pub fn unlift(&self, p: Point2, out: &mut Vec<f64>) {
        out.clear();
        out.push(p[0]);
        if self.dimension == 2 {
            out.push(p[1]);
        }
    }
}

/// Cell of a sample, if the measure is a grid measure of dimension <= 2.
pub(crate) fn cell_of(measure: &SampledMeasure, type_index: usize, point: &[f64]) -> Option<Cell> {
    let t = &measure.types[type_index];
    let half = t.cell_half_widths.as_ref()?;
    match t.dimension() {
        1 => Some(Cell { center: [point[0], 0.5], half: [half[0], 0.5], dimension: 1 }),
        2 => Some(Cell { center: [point[0], point[1]], half: [half[0], half[1]], dimension: 2 }),
        _ => None,
    }
}
