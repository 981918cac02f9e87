//! Ray intersection with point-cloud surfaces represented as oriented disks.
//!
//! Each point of a DPS is a disk of radius `r_p`. A ray is intersected with
//! every member disk; the surface point is the weighted average of the disk
//! hits, each weighted by an in-disk Gaussian and an exponential penalty on
//! its depth behind the first disk hit.

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::geometry::{Ray, Vec3};
use crate::grid::{AccelStructure, DiscretizedPointSet, Visit, VoxelCoord};
use crate::scene::Scene;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntersectionConfig {
    /// Disk radius in meters.
    pub point_radius: f64,
    /// Depth attenuation in 1/m.
    pub depth_attenuation: f64,
    /// Disks weighing less than this fraction of the heaviest disk are dropped.
    pub min_weight_cutoff: f64,
}

impl Default for IntersectionConfig {
    fn default() -> Self {
        IntersectionConfig {
            point_radius: 0.015,
            depth_attenuation: 100.0,
            min_weight_cutoff: 1e-4,
        }
    }
}

impl IntersectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.point_radius > 0.0) || !(self.depth_attenuation > 0.0) {
            return Err(Error::Config(
                "point_radius and depth_attenuation must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.min_weight_cutoff) {
            return Err(Error::Config("min_weight_cutoff must be in [0, 1)".into()));
        }
        Ok(())
    }

    /// Slack subtracted from the segment length in visibility tests.
    pub fn visibility_slack(&self) -> f64 {
        2.0 * self.point_radius
    }

    /// Along a ray leaving a surface, hits on that same surface closer than
    /// this are treated as self-intersections.
    pub fn self_hit_distance(&self) -> f64 {
        4.0 * self.point_radius
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceHit {
    pub position: Vec3,
    /// Weighted disk normal, facing the incoming ray.
    pub normal: Vec3,
    pub distance: f64,
    pub dps_index: usize,
    pub voxel_coord: VoxelCoord,
    /// Member point with the largest weight.
    pub nearest_point_index: usize,
    pub surface_label: u32,
    pub material_label: u32,
}

/// Hits on `surface_label` closer than `distance` are ignored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelfSkip {
    pub surface_label: u32,
    pub distance: f64,
}

struct DiskHit {
    t: f64,
    offset_sq: f64,
    normal: Vec3,
    point: u32,
    labels: (u32, u32),
}

/// Intersects a ray with the disks of one DPS.
pub fn intersect_dps(
    ray: &Ray,
    dps_index: usize,
    dps: &DiscretizedPointSet,
    config: &IntersectionConfig,
) -> Option<SurfaceHit> {
    intersect_dps_filtered(ray, dps_index, dps, config, None, f64::INFINITY)
}

/// As [`intersect_dps`], ignoring disks matched by `skip`. Returns `None`
/// early when no disk is hit before `beyond`: the combined distance is never
/// smaller than the nearest disk hit, so such a result could not matter.
fn intersect_dps_filtered(
    ray: &Ray,
    dps_index: usize,
    dps: &DiscretizedPointSet,
    config: &IntersectionConfig,
    skip: Option<SelfSkip>,
    beyond: f64,
) -> Option<SurfaceHit> {
    let r2 = config.point_radius * config.point_radius;
    let mut hits: SmallVec<[DiskHit; 32]> = SmallVec::new();
    let mut t_min = f64::INFINITY;
    for (&i, p) in dps.point_indices.iter().zip(&dps.points) {
        let denom = p.normal.dot(&ray.dir);
        if denom.abs() < 1e-12 {
            continue;
        }
        let t = p.normal.dot(&(p.position - ray.origin)) / denom;
        if !(t > 0.0) {
            continue;
        }
        if let Some(s) = skip {
            if p.surface_label == s.surface_label && t < s.distance {
                continue;
            }
        }
        let offset_sq = (ray.at(t) - p.position).norm_squared();
        if offset_sq > r2 {
            continue;
        }
        t_min = t_min.min(t);
        let normal = if denom > 0.0 { -p.normal } else { p.normal };
        hits.push(DiskHit {
            t,
            offset_sq,
            normal,
            point: i,
            labels: (p.surface_label, p.material_label),
        });
    }
    if hits.is_empty() || t_min > beyond {
        return None;
    }

    // Every q_i lies on the ray, so ||q_i - q_min|| = t_i - t_min.
    let weight =
        |h: &DiskHit| (-h.offset_sq / (2.0 * r2)).exp() * (-config.depth_attenuation * (h.t - t_min)).exp();
    let weights: SmallVec<[f64; 32]> = hits.iter().map(weight).collect();
    let w_max = weights.iter().copied().fold(0.0, f64::max);
    let cutoff = config.min_weight_cutoff * w_max;

    let mut w_sum = 0.0;
    let mut t_sum = 0.0;
    let mut n_sum = Vec3::zeros();
    let mut best = (f64::NEG_INFINITY, 0usize);
    for (k, (h, &w)) in hits.iter().zip(&weights).enumerate() {
        if w < cutoff {
            continue;
        }
        w_sum += w;
        t_sum += w * h.t;
        n_sum += h.normal * w;
        if w > best.0 {
            best = (w, k);
        }
    }
    let distance = t_sum / w_sum;
    let mut normal = n_sum.try_normalize(1e-12).unwrap_or_else(|| -ray.dir);
    if normal.dot(&ray.dir) > 0.0 {
        normal = -normal;
    }
    let nearest = &hits[best.1];
    Some(SurfaceHit {
        position: ray.at(distance),
        normal,
        distance,
        dps_index,
        voxel_coord: dps.voxel_coord,
        nearest_point_index: nearest.point as usize,
        surface_label: nearest.labels.0,
        material_label: nearest.labels.1,
    })
}

/// Scene-level ray queries over the DPS hierarchy.
#[derive(Clone, Copy)]
pub struct Caster<'a> {
    pub scene: &'a Scene,
    pub sets: &'a [DiscretizedPointSet],
    pub accel: &'a AccelStructure,
    pub config: &'a IntersectionConfig,
}

impl<'a> Caster<'a> {
    pub fn new(
        scene: &'a Scene,
        sets: &'a [DiscretizedPointSet],
        accel: &'a AccelStructure,
        config: &'a IntersectionConfig,
    ) -> Self {
        Caster {
            scene,
            sets,
            accel,
            config,
        }
    }

    /// Nearest surface hit along the ray.
    pub fn cast_ray(&self, ray: &Ray) -> Option<SurfaceHit> {
        self.cast_ray_skipping(ray, None)
    }

    pub fn cast_ray_skipping(&self, ray: &Ray, skip: Option<SelfSkip>) -> Option<SurfaceHit> {
        let mut best: Option<SurfaceHit> = None;
        self.accel.traverse(ray, f64::INFINITY, |i, (_, t_exit)| {
            let dps = &self.sets[i];
            // Every disk hit lies inside the box, so a box left
            // before the skip distance on the skipped surface has nothing to offer.
            if let Some(s) = skip {
                if t_exit < s.distance && dps.single_surface && dps.dominant_surface_label == s.surface_label {
                    return Visit::Continue;
                }
            }
            let beyond = best.map_or(f64::INFINITY, |b| b.distance);
            match intersect_dps_filtered(ray, i, dps, self.config, skip, beyond) {
                // Ties (neighbouring sets on one flat surface) go to the lower
                // index, so the result does not depend on the visiting order.
                Some(h) if best.is_none_or(|b| (h.distance, h.dps_index) < (b.distance, b.dps_index)) => {
                    best = Some(h);
                    Visit::Shrink(h.distance)
                }
                _ => Visit::Continue,
            }
        });
        best
    }

    /// A ray leaving the surface at `hit` in direction `dir`.
    pub fn cast_from_hit(&self, hit: &SurfaceHit, dir: &Vec3) -> Option<SurfaceHit> {
        self.cast_from_surface(&hit.position, &hit.normal, hit.surface_label, dir)
    }

    /// A ray leaving a surface point, nudged off the surface on the side of
    /// `dir` and ignoring nearby hits on the same surface.
    pub fn cast_from_surface(
        &self,
        position: &Vec3,
        normal: &Vec3,
        surface_label: u32,
        dir: &Vec3,
    ) -> Option<SurfaceHit> {
        let side = if dir.dot(normal) >= 0.0 { 1.0 } else { -1.0 };
        let ray = Ray::new(
            position + normal * (side * crate::geometry::SURFACE_BIAS),
            *dir,
        );
        self.cast_ray_skipping(
            &ray,
            Some(SelfSkip {
                surface_label,
                distance: self.config.self_hit_distance(),
            }),
        )
    }

    /// True iff nothing is hit between `a` and `b`, ignoring the last
    /// `visibility_slack` meters before `b`.
    pub fn test_visibility(&self, a: &Vec3, b: &Vec3) -> bool {
        let Some((ray, len)) = Ray::towards(*a, *b) else {
            return true;
        };
        let limit = len - self.config.visibility_slack();
        if limit <= 0.0 {
            return true;
        }
        let mut visible = true;
        self.accel.traverse(&ray, limit, |i, _| {
            match intersect_dps_filtered(&ray, i, &self.sets[i], self.config, None, limit) {
                Some(h) if h.distance < limit => {
                    visible = false;
                    Visit::Stop
                }
                _ => Visit::Continue,
            }
        });
        visible
    }
}
