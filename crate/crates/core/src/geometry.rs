//! Small geometric primitives shared by every stage of the tracer.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;

/// Offset applied along the surface normal when a secondary ray leaves a hit.
pub const SURFACE_BIAS: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    /// Unit length.
    pub dir: Vec3,
}

impl Ray {
    pub fn new(origin: Vec3, dir: Vec3) -> Self {
        Ray { origin, dir }
    }

    /// Ray from `from` towards `to`. Returns the ray and the distance between them.
    pub fn towards(from: Vec3, to: Vec3) -> Option<(Self, f64)> {
        let d = to - from;
        let len = d.norm();
        if !(len > 0.0) || !len.is_finite() {
            return None;
        }
        Some((Ray::new(from, d / len), len))
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.dir * t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn empty() -> Self {
        Aabb {
            min: Vec3::repeat(f64::INFINITY),
            max: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    pub fn is_empty(&self) -> bool {
        (0..3).any(|i| self.min[i] > self.max[i])
    }

    pub fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn merge(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    pub fn inflate(&self, r: f64) -> Aabb {
        Aabb {
            min: self.min - Vec3::repeat(r),
            max: self.max + Vec3::repeat(r),
        }
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn surface_area(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let e = self.max - self.min;
        2.0 * (e.x * e.y + e.y * e.z + e.z * e.x)
    }

    /// Slab test with `inv_dir` from [`slab_inverse`]. Returns the parametric
    /// entry/exit distances clipped to `[0, t_max]`.
    ///
    /// Branch-free per axis: deeper bounces make rays incoherent, and the
    /// comparisons of an early-exit version become unpredictable.
    pub fn intersect(&self, origin: &Vec3, inv_dir: &Vec3, t_max: f64) -> Option<(f64, f64)> {
        let mut t0 = 0.0_f64;
        let mut t1 = t_max;
        for i in 0..3 {
            let a = (self.min[i] - origin[i]) * inv_dir[i];
            let b = (self.max[i] - origin[i]) * inv_dir[i];
            let (near, far) = if a < b { (a, b) } else { (b, a) };
            t0 = if near > t0 { near } else { t0 };
            t1 = if far < t1 { far } else { t1 };
        }
        (t0 <= t1).then_some((t0, t1))
    }
}

/// Two unit vectors completing `n` to a right-handed orthonormal frame.
pub fn tangent_basis(n: &Vec3) -> (Vec3, Vec3) {
    // Duff et al., "Building an Orthonormal Basis, Revisited".
    let sign = 1.0_f64.copysign(n.z);
    let a = -1.0 / (sign + n.z);
    let b = n.x * n.y * a;
    let u = Vec3::new(1.0 + sign * n.x * n.x * a, sign * b, -sign * n.x);
    let v = Vec3::new(b, sign + n.y * n.y * a, -n.y);
    (u, v)
}

/// Componentwise reciprocal of a ray direction for [`Aabb::intersect`]. Zero
/// components become a huge finite value of the same sign, so the slab test
/// never forms `0 * inf`; a ray parallel to a slab is then bounded by it unless
/// its origin lies strictly inside.
pub fn slab_inverse(dir: &Vec3) -> Vec3 {
    dir.map(|d| if d.abs() < 1e-300 { 1e300f64.copysign(d) } else { 1.0 / d })
}

/// Mirror `d` about the plane with unit normal `n`.
pub fn reflect(d: &Vec3, n: &Vec3) -> Vec3 {
    d - n * (2.0 * d.dot(n))
}

/// Angle between two unit vectors in degrees.
pub fn angle_deg(a: &Vec3, b: &Vec3) -> f64 {
    // atan2 keeps precision for nearly parallel vectors where acos does not.
    a.cross(b).norm().atan2(a.dot(b)).to_degrees()
}
