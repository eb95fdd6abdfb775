//! Planar geometry in projected meters.

use serde::{Deserialize, Serialize};

pub const METERS_PER_KM: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Point {
        Point::new(self.x + dx, self.y + dy)
    }
}

pub fn polyline_length(vertices: &[Point]) -> f64 {
    vertices.windows(2).map(|w| w[0].distance(&w[1])).sum()
}

/// Walks a polyline and yields the points at the requested arc lengths.
///
/// `stations` must be ascending; values past the end clamp to the last vertex.
pub fn points_at_arc_lengths(vertices: &[Point], stations: &[f64]) -> Vec<Point> {
    let mut out = Vec::with_capacity(stations.len());
    let mut seg = 0usize;
    let mut seg_start = 0.0;
    for &s in stations {
        while seg + 1 < vertices.len() - 1 {
            let len = vertices[seg].distance(&vertices[seg + 1]);
            if s <= seg_start + len {
                break;
            }
            seg_start += len;
            seg += 1;
        }
        let a = vertices[seg];
        let b = vertices[seg + 1];
        let len = a.distance(&b);
        let t = if len > 0.0 { ((s - seg_start) / len).clamp(0.0, 1.0) } else { 0.0 };
        out.push(Point::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)));
    }
    out
}

/// Dense symmetric matrix of pairwise distances, in units of `unit` meters.
pub fn distance_matrix(points: &[Point], unit: f64) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..i {
            let v = points[i].distance(&points[j]) / unit;
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    d
}

pub fn max_pairwise_distance(points: &[Point]) -> f64 {
    let mut best = 0.0f64;
    for (i, a) in points.iter().enumerate() {
        for b in &points[..i] {
            best = best.max(a.distance(b));
        }
    }
    best
}
