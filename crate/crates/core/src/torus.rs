//! Minimal-image arithmetic on the unit torus T² = [0,1)².

use serde::{Deserialize, Serialize};
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

/// Plane vector (displacements, velocities, unit normals).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

pub type Velocity = Vec2;

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    #[inline]
    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }
    #[inline]
    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }
    #[inline]
    pub fn norm2(self) -> f64 {
        self.dot(self)
    }
    #[inline]
    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }
    /// Rotation by +π/2.
    #[inline]
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }
    #[inline]
    pub fn from_angle(theta: f64) -> Vec2 {
        let (s, c) = theta.sin_cos();
        Vec2::new(c, s)
    }
    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
    pub fn to_array(self) -> [f64; 2] {
        [self.x, self.y]
    }
}

impl From<[f64; 2]> for Vec2 {
    fn from(a: [f64; 2]) -> Self {
        Vec2::new(a[0], a[1])
    }
}
impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    #[inline]
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}
impl Sub for Vec2 {
    type Output = Vec2;
    #[inline]
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}
impl Mul<f64> for Vec2 {
    type Output = Vec2;
    #[inline]
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}
impl Mul<Vec2> for f64 {
    type Output = Vec2;
    #[inline]
    fn mul(self, v: Vec2) -> Vec2 {
        v * self
    }
}
impl Neg for Vec2 {
    type Output = Vec2;
    #[inline]
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}
impl AddAssign for Vec2 {
    #[inline]
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}
impl SubAssign for Vec2 {
    #[inline]
    fn sub_assign(&mut self, o: Vec2) {
        self.x -= o.x;
        self.y -= o.y;
    }
}

/// Wrap a coordinate into [0,1).
#[inline]
pub fn wrap(c: f64) -> f64 {
    let w = c - c.floor();
    // c slightly below an integer can round up to exactly 1.0
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

/// Point of the unit torus; coordinates are kept in [0,1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct TorusPoint {
    x: f64,
    y: f64,
}

impl TorusPoint {
    pub fn new(x: f64, y: f64) -> Self {
        TorusPoint { x: wrap(x), y: wrap(y) }
    }
    pub fn from_vec(v: Vec2) -> Self {
        Self::new(v.x, v.y)
    }
    #[inline]
    pub fn x(&self) -> f64 {
        self.x
    }
    #[inline]
    pub fn y(&self) -> f64 {
        self.y
    }
    #[inline]
    pub fn as_vec(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }
    /// Translate by `d` and wrap.
    #[inline]
    pub fn shifted(&self, d: Vec2) -> Self {
        Self::new(self.x + d.x, self.y + d.y)
    }
}

impl From<[f64; 2]> for TorusPoint {
    fn from(a: [f64; 2]) -> Self {
        TorusPoint::new(a[0], a[1])
    }
}
impl From<TorusPoint> for [f64; 2] {
    fn from(p: TorusPoint) -> Self {
        [p.x, p.y]
    }
}

/// Nearest-image component in [-1/2, 1/2); exact half periods map to -1/2.
#[inline]
pub fn min_image_component(d: f64) -> f64 {
    let r = d - (d + 0.5).floor();
    if r >= 0.5 {
        r - 1.0
    } else {
        r
    }
}

/// Displacement r ≡ a − b (mod 1) with components in [-1/2, 1/2).
#[inline]
pub fn min_image_disp(a: &TorusPoint, b: &TorusPoint) -> Vec2 {
    Vec2::new(min_image_component(a.x - b.x), min_image_component(a.y - b.y))
}

/// Torus distance between two points.
#[inline]
pub fn torus_distance(a: &TorusPoint, b: &TorusPoint) -> f64 {
    min_image_disp(a, b).norm()
}

/// All lattice vectors q with |rel_pos + q| ≤ rel_speed·horizon + eps + 1/2.
///
/// A superset of the images through which a pair at relative position
/// `rel_pos` (relative speed ≤ `rel_speed`) can touch within `horizon`.
pub fn candidate_images(rel_pos: Vec2, rel_speed: f64, horizon: f64, eps: f64) -> Vec<[i64; 2]> {
    let radius = rel_speed * horizon + eps + 0.5;
    let r2 = radius * radius;
    let qx_lo = (-rel_pos.x - radius).floor() as i64;
    let qx_hi = (-rel_pos.x + radius).ceil() as i64;
    let qy_lo = (-rel_pos.y - radius).floor() as i64;
    let qy_hi = (-rel_pos.y + radius).ceil() as i64;
    let mut out = Vec::new();
    for qx in qx_lo..=qx_hi {
        let dx = rel_pos.x + qx as f64;
        if dx * dx > r2 {
            continue;
        }
        for qy in qy_lo..=qy_hi {
            let dy = rel_pos.y + qy as f64;
            if dx * dx + dy * dy <= r2 {
                out.push([qx, qy]);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_stays_in_unit_interval() {
        for c in [-1e-18, -0.0, 1.0, 2.5, -3.25, 0.999_999_999_999_999_9] {
            let w = wrap(c);
            assert!((0.0..1.0).contains(&w), "{c} -> {w}");
        }
    }

    #[test]
    fn min_image_examples() {
        let r = min_image_disp(&TorusPoint::new(0.9, 0.1), &TorusPoint::new(0.1, 0.9));
        assert!((r.x + 0.2).abs() < 1e-12 && (r.y - 0.2).abs() < 1e-12);
        let r = min_image_disp(&TorusPoint::new(0.3, 0.3), &TorusPoint::new(0.3, 0.3));
        assert_eq!(r, Vec2::ZERO);
        let r = min_image_disp(&TorusPoint::new(0.75, 0.5), &TorusPoint::new(0.25, 0.5));
        assert_eq!(r, Vec2::new(-0.5, 0.0));
        let r = min_image_disp(&TorusPoint::new(0.25, 0.5), &TorusPoint::new(0.75, 0.5));
        assert_eq!(r, Vec2::new(-0.5, 0.0));
    }

    #[test]
    fn zero_speed_images_contain_origin() {
        let q = candidate_images(Vec2::new(0.1, 0.0), 0.0, 5.0, 0.01);
        assert!(q.contains(&[0, 0]));
        for v in &q {
            assert!(v[0].abs() <= 1 && v[1].abs() <= 1);
        }
    }
}
