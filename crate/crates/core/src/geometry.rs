//! Small planar geometry kit: convex polygon clipping, capped-simplex
//! projection and marching-squares contouring.

use std::collections::HashMap;

pub type Point2 = [f64; 2];

/// Axis-aligned rectangle as a counter-clockwise polygon.
pub fn rectangle(center: Point2, half: Point2) -> Vec<Point2> {
    vec![
        [center[0] - half[0], center[1] - half[1]],
        [center[0] + half[0], center[1] - half[1]],
        [center[0] + half[0], center[1] + half[1]],
        [center[0] - half[0], center[1] + half[1]],
    ]
}

/// Keeps the part of a convex polygon where `a·p + c <= 0` (or `< 0` when
/// `strict`). A vanishing normal keeps everything or nothing according to
/// the sign of `c`.
pub fn clip_halfplane(poly: &[Point2], a: Point2, c: f64, strict: bool) -> Vec<Point2> {
    if poly.is_empty() {
        return Vec::new();
    }
    if a[0] == 0.0 && a[1] == 0.0 {
        let keep = if strict { c < 0.0 } else { c <= 0.0 };
        return if keep { poly.to_vec() } else { Vec::new() };
    }
    let value = |p: &Point2| a[0] * p[0] + a[1] * p[1] + c;
    let mut out = Vec::with_capacity(poly.len() + 1);
    for k in 0..poly.len() {
        let cur = poly[k];
        let next = poly[(k + 1) % poly.len()];
        let vc = value(&cur);
        let vn = value(&next);
        if vc <= 0.0 {
            out.push(cur);
        }
        if (vc < 0.0 && vn > 0.0) || (vc > 0.0 && vn < 0.0) {
            let t = vc / (vc - vn);
            out.push([cur[0] + t * (next[0] - cur[0]), cur[1] + t * (next[1] - cur[1])]);
        }
    }
    if out.len() < 3 {
        out.clear();
    }
    out
}

/// Area and centroid of a simple polygon (shoelace formula).
pub fn area_centroid(poly: &[Point2]) -> (f64, Point2) {
    if poly.len() < 3 {
        return (0.0, [0.0, 0.0]);
    }
    let origin = poly[0];
    let mut twice_area = 0.0;
    let mut cx = 0.0;
    let mut cy = 0.0;
    for k in 1..poly.len() - 1 {
        let p = [poly[k][0] - origin[0], poly[k][1] - origin[1]];
        let q = [poly[k + 1][0] - origin[0], poly[k + 1][1] - origin[1]];
        let cross = p[0] * q[1] - p[1] * q[0];
        twice_area += cross;
        cx += cross * (p[0] + q[0]);
        cy += cross * (p[1] + q[1]);
    }
    let area = 0.5 * twice_area;
    if area.abs() < f64::MIN_POSITIVE {
        return (0.0, origin);
    }
    (area.abs(), [origin[0] + cx / (3.0 * twice_area), origin[1] + cy / (3.0 * twice_area)])
}

/// Euclidean projection onto `{m : m_i >= floor, sum m_i = 1}`.
pub fn project_capped_simplex(m: &[f64], floor: f64) -> Vec<f64> {
    let n = m.len();
    let budget = 1.0 - floor * n as f64;
    debug_assert!(budget >= 0.0);
    let shifted: Vec<f64> = m.iter().map(|x| x - floor).collect();
    let mut sorted = shifted.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (k, value) in sorted.iter().enumerate() {
        cumulative += value;
        let candidate = (cumulative - budget) / (k + 1) as f64;
        if value - candidate > 0.0 {
            theta = candidate;
        }
    }
    let mut out: Vec<f64> = shifted.iter().map(|x| (x - theta).max(0.0) + floor).collect();
    // exact simplex identity
    let total: f64 = out.iter().sum();
    if let Some(largest) = out.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(k, _)| k) {
        out[largest] += 1.0 - total;
    }
    out
}

/// Scalar field sampled on a regular grid of `(nx + 1) x (ny + 1)` nodes.
#[derive(Debug, Clone)]
pub struct GridField {
    pub origin: Point2,
    pub step: Point2,
    pub nx: usize,
    pub ny: usize,
    /// Row-major by y: `values[iy * (nx + 1) + ix]`.
    pub values: Vec<f64>,
}

impl GridField {
    pub fn sample(origin: Point2, extent: Point2, nx: usize, ny: usize, f: impl Fn(Point2) -> f64) -> Self {
        let step = [extent[0] / nx as f64, extent[1] / ny as f64];
        let mut values = Vec::with_capacity((nx + 1) * (ny + 1));
        for iy in 0..=ny {
            for ix in 0..=nx {
                values.push(f([origin[0] + ix as f64 * step[0], origin[1] + iy as f64 * step[1]]));
            }
        }
        Self { origin, step, nx, ny, values }
    }

    fn value(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * (self.nx + 1) + ix]
    }

    fn node(&self, ix: usize, iy: usize) -> Point2 {
        [self.origin[0] + ix as f64 * self.step[0], self.origin[1] + iy as f64 * self.step[1]]
    }
}

/// Identifies a grid edge: `(horizontal, ix, iy)` where a horizontal edge
/// runs from node `(ix, iy)` to `(ix + 1, iy)`.
pub type EdgeKey = (bool, usize, usize);

#[derive(Debug, Clone, Copy)]
pub struct Segment {
    pub a: Point2,
    pub b: Point2,
    pub key_a: EdgeKey,
    pub key_b: EdgeKey,
}

impl Segment {
    pub fn midpoint(&self) -> Point2 {
        [0.5 * (self.a[0] + self.b[0]), 0.5 * (self.a[1] + self.b[1])]
    }
}

/// Marching squares on the zero level set. Node values `>= 0` count as
/// inside so that exact zeros never produce duplicate crossings.
pub fn marching_squares(field: &GridField) -> Vec<Segment> {
    let crossing = |key: EdgeKey| -> Point2 {
        let (horizontal, ix, iy) = key;
        let (p, q, vp, vq) = if horizontal {
            (field.node(ix, iy), field.node(ix + 1, iy), field.value(ix, iy), field.value(ix + 1, iy))
        } else {
            (field.node(ix, iy), field.node(ix, iy + 1), field.value(ix, iy), field.value(ix, iy + 1))
        };
        let t = if vp == vq { 0.5 } else { (vp / (vp - vq)).clamp(0.0, 1.0) };
        [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
    };
    let mut segments = Vec::new();
    for iy in 0..field.ny {
        for ix in 0..field.nx {
            let v =
                [field.value(ix, iy), field.value(ix + 1, iy), field.value(ix + 1, iy + 1), field.value(ix, iy + 1)];
            let inside = v.map(|x| x >= 0.0);
            // edges: bottom, right, top, left
            let edges: [EdgeKey; 4] = [(true, ix, iy), (false, ix + 1, iy), (true, ix, iy + 1), (false, ix, iy)];
            let cut = [inside[0] != inside[1], inside[1] != inside[2], inside[2] != inside[3], inside[3] != inside[0]];
            let cut_edges: Vec<usize> = (0..4).filter(|&e| cut[e]).collect();
            let mut push = |e1: usize, e2: usize| {
                segments.push(Segment {
                    a: crossing(edges[e1]),
                    b: crossing(edges[e2]),
                    key_a: edges[e1],
                    key_b: edges[e2],
                });
            };
            match cut_edges.len() {
                2 => push(cut_edges[0], cut_edges[1]),
                4 => {
                    // saddle: resolve with the cell-center average
                    let center_inside = v.iter().sum::<f64>() >= 0.0;
                    if center_inside == inside[0] {
                        push(0, 1);
                        push(2, 3);
                    } else {
                        push(0, 3);
                        push(1, 2);
                    }
                }
                _ => {}
            }
        }
    }
    segments
}

/// Chains segments sharing grid-edge endpoints into ordered polylines.
pub fn chain_segments(segments: &[Segment]) -> Vec<Vec<Point2>> {
    let mut by_key: HashMap<EdgeKey, Vec<usize>> = HashMap::new();
    for (s, seg) in segments.iter().enumerate() {
        by_key.entry(seg.key_a).or_default().push(s);
        by_key.entry(seg.key_b).or_default().push(s);
    }
    let mut used = vec![false; segments.len()];
    let mut lines = Vec::new();
    // start from open ends first so open polylines come out whole
    let mut order: Vec<usize> = (0..segments.len())
        .filter(|&s| by_key[&segments[s].key_a].len() == 1 || by_key[&segments[s].key_b].len() == 1)
        .collect();
    order.extend(0..segments.len());
    for start in order {
        if used[start] {
            continue;
        }
        used[start] = true;
        let seg = segments[start];
        let (mut keys, mut points) = if by_key[&seg.key_a].len() == 1 {
            (vec![seg.key_a, seg.key_b], vec![seg.a, seg.b])
        } else {
            (vec![seg.key_b, seg.key_a], vec![seg.b, seg.a])
        };
        // extend forward, then backward
        for direction in 0..2 {
            loop {
                let tail = if direction == 0 { *keys.last().unwrap() } else { keys[0] };
                let next = by_key[&tail].iter().copied().find(|&s| !used[s]);
                let Some(s) = next else { break };
                used[s] = true;
                let other = &segments[s];
                let (key, point) = if other.key_a == tail { (other.key_b, other.b) } else { (other.key_a, other.a) };
                if direction == 0 {
                    keys.push(key);
                    points.push(point);
                } else {
                    keys.insert(0, key);
                    points.insert(0, point);
                }
            }
        }
        lines.push(points);
    }
    lines
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clipping_half_square() {
        let square = rectangle([0.5, 0.5], [0.5, 0.5]);
        let half = clip_halfplane(&square, [1.0, 0.0], -0.5, false);
        let (area, centroid) = area_centroid(&half);
        assert!((area - 0.5).abs() < 1e-15);
        assert!((centroid[0] - 0.25).abs() < 1e-15);
        assert!((centroid[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn diagonal_clip_is_triangle() {
        let square = rectangle([0.5, 0.5], [0.5, 0.5]);
        let tri = clip_halfplane(&square, [1.0, 1.0], -1.0, false);
        let (area, centroid) = area_centroid(&tri);
        assert!((area - 0.5).abs() < 1e-15);
        assert!((centroid[0] - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn degenerate_normal_keeps_by_sign() {
        let square = rectangle([0.0, 0.0], [1.0, 1.0]);
        assert_eq!(clip_halfplane(&square, [0.0, 0.0], 0.0, false).len(), 4);
        assert!(clip_halfplane(&square, [0.0, 0.0], 0.0, true).is_empty());
    }

    #[test]
    fn projection_respects_floor_and_sum() {
        let p = project_capped_simplex(&[1.3, -0.2, -0.1], 0.05);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(p.iter().all(|&x| x >= 0.05 - 1e-15));
        assert!((p[0] - 0.9).abs() < 1e-12);
        let q = project_capped_simplex(&[0.2, 0.3, 0.5], 0.01);
        assert!((q[0] - 0.2).abs() < 1e-15 && (q[2] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn marching_squares_circle_length() {
        let field = GridField::sample([-1.0, -1.0], [2.0, 2.0], 200, 200, |p| 0.5 - (p[0] * p[0] + p[1] * p[1]).sqrt());
        let segments = marching_squares(&field);
        let length: f64 = segments.iter().map(|s| distance(&s.a, &s.b)).sum();
        assert!((length - std::f64::consts::PI).abs() < 1e-3);
        let lines = chain_segments(&segments);
        assert_eq!(lines.len(), 1);
    }

    #[test]
    fn open_contour_chains_in_order() {
        let field = GridField::sample([0.0, 0.0], [1.0, 1.0], 10, 10, |p| p[0] - 0.55);
        let lines = chain_segments(&marching_squares(&field));
        assert_eq!(lines.len(), 1);
        let line = &lines[0];
        assert_eq!(line.len(), 11);
        let ys: Vec<f64> = line.iter().map(|p| p[1]).collect();
        assert!(ys.windows(2).all(|w| w[1] > w[0]) || ys.windows(2).all(|w| w[1] < w[0]));
    }
}
