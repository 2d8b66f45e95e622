//! Planar geometry helpers shared by the road model, the simulator and the
//! scenario tools. World frame: x east, y north, z up, meters; headings are
//! radians counterclockwise from +x.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;

/// Unit vector for a heading.
pub fn heading_vec(heading: f64) -> Vec2 {
    Vec2::new(heading.cos(), heading.sin())
}

/// Right-hand normal of a direction (clockwise quarter turn).
pub fn right_of(dir: Vec2) -> Vec2 {
    Vec2::new(dir.y, -dir.x)
}

/// z component of the 2D cross product.
pub fn cross(a: Vec2, b: Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Wraps an angle in radians to (-pi, pi].
pub fn wrap_pi(angle: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut a = angle.rem_euclid(two_pi);
    if a > std::f64::consts::PI {
        a -= two_pi;
    }
    a
}

/// Wraps an angle in degrees to (-180, 180].
pub fn wrap_deg(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(360.0);
    if a > 180.0 {
        a -= 360.0;
    }
    a
}

/// Result of projecting a point onto a polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Arc length of the foot point from the first vertex.
    pub s: f64,
    /// Signed distance, positive to the right of the digitization direction.
    pub offset: f64,
    pub distance: f64,
    pub piece: usize,
    pub foot: Vec2,
}

/// Piecewise-linear curve with cached cumulative arc length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct Polyline {
    points: Vec<Vec2>,
    cumulative: Vec<f64>,
}

impl From<Vec<[f64; 2]>> for Polyline {
    fn from(raw: Vec<[f64; 2]>) -> Self {
        Polyline::new(raw.into_iter().map(|[x, y]| Vec2::new(x, y)).collect())
    }
}

impl From<Polyline> for Vec<[f64; 2]> {
    fn from(line: Polyline) -> Self {
        line.points.iter().map(|p| [p.x, p.y]).collect()
    }
}

impl Polyline {
    pub fn new(points: Vec<Vec2>) -> Self {
        let mut cumulative = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        for (i, p) in points.iter().enumerate() {
            if i > 0 {
                acc += (p - points[i - 1]).norm();
            }
            cumulative.push(acc);
        }
        Polyline { points, cumulative }
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn len_pieces(&self) -> usize {
        self.points.len().saturating_sub(1)
    }

    pub fn length(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    /// Shortest distance between consecutive vertices.
    pub fn min_spacing(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1] - w[0]).norm())
            .fold(f64::INFINITY, f64::min)
    }

    /// Index of the piece that contains arc length `s` (clamped). A vertex
    /// belongs to its outgoing piece, except the last one.
    pub fn piece_at(&self, s: f64) -> usize {
        let n = self.len_pieces();
        if n == 0 {
            return 0;
        }
        // first cumulative entry strictly greater than s, minus one
        let idx = self.cumulative.partition_point(|&c| c <= s);
        idx.saturating_sub(1).min(n - 1)
    }

    pub fn piece_direction(&self, piece: usize) -> Vec2 {
        (self.points[piece + 1] - self.points[piece]).normalize()
    }

    pub fn point_at(&self, s: f64) -> Vec2 {
        let s = s.clamp(0.0, self.length());
        let i = self.piece_at(s);
        let a = self.points[i];
        let b = self.points[i + 1];
        let span = self.cumulative[i + 1] - self.cumulative[i];
        let t = if span > 0.0 { (s - self.cumulative[i]) / span } else { 0.0 };
        a + (b - a) * t
    }

    pub fn tangent_at(&self, s: f64) -> Vec2 {
        self.piece_direction(self.piece_at(s.clamp(0.0, self.length())))
    }

    /// Nearest point on the curve. Ties go to the earliest piece.
    pub fn project(&self, p: Vec2) -> Projection {
        let mut best: Option<Projection> = None;
        for i in 0..self.len_pieces() {
            let a = self.points[i];
            let d = self.points[i + 1] - a;
            let len2 = d.norm_squared();
            let t = ((p - a).dot(&d) / len2).clamp(0.0, 1.0);
            let foot = a + d * t;
            let distance = (p - foot).norm();
            if best.map_or(true, |b| distance < b.distance) {
                let len = len2.sqrt();
                let side = -cross(d, p - a) / len;
                let offset = if t > 0.0 && t < 1.0 { side } else { distance.copysign(side) };
                best = Some(Projection {
                    s: self.cumulative[i] + t * len,
                    offset,
                    distance,
                    piece: i,
                    foot,
                });
            }
        }
        best.expect("polyline has at least one piece")
    }

    pub fn reversed(&self) -> Polyline {
        let mut pts = self.points.clone();
        pts.reverse();
        Polyline::new(pts)
    }
}

/// Area of a simple polygon (shoelace), sign dropped.
pub fn polygon_area(points: &[Vec2]) -> f64 {
    let n = points.len();
    let mut acc = 0.0;
    for i in 0..n {
        acc += cross(points[i], points[(i + 1) % n]);
    }
    acc.abs() * 0.5
}

fn segments_cross(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> bool {
    let d1 = cross(b - a, c - a);
    let d2 = cross(b - a, d - a);
    let d3 = cross(d - c, a - c);
    let d4 = cross(d - c, b - c);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on = |p: Vec2, q: Vec2, r: Vec2, o: f64| {
        o == 0.0
            && r.x >= p.x.min(q.x)
            && r.x <= p.x.max(q.x)
            && r.y >= p.y.min(q.y)
            && r.y <= p.y.max(q.y)
    };
    on(a, b, c, d1) || on(a, b, d, d2) || on(c, d, a, d3) || on(c, d, b, d4)
}

/// True when no two non-adjacent edges of the closed ring touch.
pub fn is_simple_polygon(points: &[Vec2]) -> bool {
    let n = points.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        let (a, b) = (points[i], points[(i + 1) % n]);
        for j in (i + 1)..n {
            if j == i || (j + 1) % n == i || (i + 1) % n == j {
                continue;
            }
            let (c, d) = (points[j], points[(j + 1) % n]);
            if segments_cross(a, b, c, d) {
                return false;
            }
        }
    }
    true
}

/// Even-odd point-in-polygon test.
pub fn point_in_polygon(p: Vec2, poly: &[Vec2]) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x {
            inside = !inside;
        }
        j = i;
    }
    inside
}
