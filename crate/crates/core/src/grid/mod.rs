//! Voxel discretization of the point cloud into discretized point sets (DPS).

mod bvh;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Aabb, Vec3};
use crate::scene::{AugmentedPoint, Scene};

pub use bvh::{AccelStructure, Visit};

pub type VoxelCoord = [i32; 3];

/// Slack added around every disk's bounds so that rounding in the slab test
/// never loses a hit on a disk lying exactly in a box face.
pub const BOX_PAD: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoxelGridConfig {
    /// Voxel edge length in meters.
    pub voxel_size: f64,
}

impl Default for VoxelGridConfig {
    fn default() -> Self {
        VoxelGridConfig { voxel_size: 0.0625 }
    }
}

impl VoxelGridConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.voxel_size > 0.0) || !self.voxel_size.is_finite() {
            return Err(Error::Config(format!(
                "voxel_size must be positive, got {}",
                self.voxel_size
            )));
        }
        Ok(())
    }

    pub fn voxel_of(&self, p: &Vec3) -> VoxelCoord {
        [
            (p.x / self.voxel_size).floor() as i32,
            (p.y / self.voxel_size).floor() as i32,
            (p.z / self.voxel_size).floor() as i32,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizedPointSet {
    pub voxel_coord: VoxelCoord,
    /// Ascending indices into `Scene::points`.
    pub point_indices: Vec<u32>,
    /// Bounds of the member disks, padded by [`BOX_PAD`].
    pub aabb: Aabb,
    /// Mean member position; target of launched rays and visibility tests.
    pub reception_point: Vec3,
    pub dominant_surface_label: u32,
    /// Whether every member carries `dominant_surface_label`.
    pub single_surface: bool,
    /// Copies of the member points in `point_indices` order. Casting reads
    /// these instead of chasing indices through the whole cloud.
    pub points: Vec<AugmentedPoint>,
}

impl DiscretizedPointSet {
    /// Builds a set from ascending `point_indices`, deriving the bounds,
    /// reception point, dominant label and point copies from `scene`.
    /// `disk_radius` is the radius of every member disk.
    pub fn new(voxel_coord: VoxelCoord, point_indices: Vec<u32>, scene: &Scene, disk_radius: f64) -> Self {
        let points: Vec<AugmentedPoint> =
            point_indices.iter().map(|&i| scene.points[i as usize].clone()).collect();
        let mut aabb = Aabb::empty();
        let mut sum = Vec3::zeros();
        let mut labels: HashMap<u32, usize> = HashMap::new();
        for p in &points {
            // A disk of radius r with unit normal n spans r * sqrt(1 - n_i^2) along axis i.
            let half = p.normal.map(|c| disk_radius * (1.0 - c * c).max(0.0).sqrt() + BOX_PAD);
            aabb.grow(&(p.position - half));
            aabb.grow(&(p.position + half));
            sum += p.position;
            *labels.entry(p.surface_label).or_default() += 1;
        }
        let dominant_surface_label = labels
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(&l, _)| l)
            .unwrap_or(0);
        DiscretizedPointSet {
            voxel_coord,
            reception_point: sum / points.len().max(1) as f64,
            aabb,
            point_indices,
            dominant_surface_label,
            single_surface: labels.len() <= 1,
            points,
        }
    }
}

/// Bins every point into its voxel. `disk_radius` sizes the DPS bounds.
///
/// The result is sorted lexicographically by voxel coordinate.
pub fn build_grid(
    scene: &Scene,
    config: &VoxelGridConfig,
    disk_radius: f64,
) -> Vec<DiscretizedPointSet> {
    let mut keyed: Vec<(VoxelCoord, u32)> = scene
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| (config.voxel_of(&p.position), i as u32))
        .collect();
    keyed.sort_unstable();

    keyed
        .chunk_by(|a, b| a.0 == b.0)
        .map(|group| {
            let point_indices = group.iter().map(|&(_, i)| i).collect();
            DiscretizedPointSet::new(group[0].0, point_indices, scene, disk_radius)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridStats {
    pub dps_count: usize,
    pub min_points: usize,
    pub mean_points: f64,
    pub max_points: usize,
    pub memory_bytes: usize,
}

pub fn grid_stats(sets: &[DiscretizedPointSet]) -> GridStats {
    let counts = sets.iter().map(|d| d.point_indices.len());
    let total: usize = counts.clone().sum();
    let memory_bytes = sets
        .iter()
        .map(|d| {
            std::mem::size_of::<DiscretizedPointSet>()
                + 4 * d.point_indices.capacity()
                + std::mem::size_of::<AugmentedPoint>() * d.points.capacity()
        })
        .sum::<usize>()
        + AccelStructure::estimated_bytes(sets.len());
    GridStats {
        dps_count: sets.len(),
        min_points: counts.clone().min().unwrap_or(0),
        mean_points: if sets.is_empty() {
            0.0
        } else {
            total as f64 / sets.len() as f64
        },
        max_points: counts.max().unwrap_or(0),
        memory_bytes,
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::em::MaterialParams;
    use crate::scene::AugmentedPoint;

    fn scene_of(points: &[[f64; 3]]) -> Scene {
        let pts = points
            .iter()
            .map(|p| AugmentedPoint {
                position: Vec3::from(*p),
                normal: Vec3::z(),
                surface_label: 0,
                material_label: 0,
            })
            .collect();
        Scene::from_parts(
            pts,
            vec![],
            vec![],
            vec![],
            BTreeMap::from([(0, MaterialParams::default())]),
        )
        .unwrap()
    }

    #[test]
    fn two_points_one_voxel() {
        let s = scene_of(&[[0.01, 0.01, 0.01], [0.05, 0.05, 0.05]]);
        let g = build_grid(&s, &VoxelGridConfig::default(), 0.015);
        assert_eq!(g.len(), 1);
        assert!((g[0].reception_point - Vec3::repeat(0.03)).norm() < 1e-12);
        // flat disks facing +z: full radius in x and y, no thickness in z
        let min = Vec3::new(0.01 - 0.015, 0.01 - 0.015, 0.01) - Vec3::repeat(BOX_PAD);
        let max = Vec3::new(0.05 + 0.015, 0.05 + 0.015, 0.05) + Vec3::repeat(BOX_PAD);
        assert!((g[0].aabb.min - min).norm() < 1e-12);
        assert!((g[0].aabb.max - max).norm() < 1e-12);
    }

    #[test]
    fn floor_binning_splits() {
        let s = scene_of(&[[0.01, 0.0, 0.0], [0.07, 0.0, 0.0]]);
        let g = build_grid(&s, &VoxelGridConfig::default(), 0.015);
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].voxel_coord, [0, 0, 0]);
        assert_eq!(g[1].voxel_coord, [1, 0, 0]);
    }

    #[test]
    fn negative_coordinates_floor() {
        let cfg = VoxelGridConfig::default();
        assert_eq!(cfg.voxel_of(&Vec3::new(-0.01, 0.0, 0.0625)), [-1, 0, 1]);
    }

    #[test]
    fn dominant_label_tie_breaks_low() {
        let mut s = scene_of(&[[0.01, 0.0, 0.0], [0.02, 0.0, 0.0], [0.03, 0.0, 0.0]]);
        s.points[0].surface_label = 5;
        s.points[1].surface_label = 2;
        s.points[2].surface_label = 9;
        let g = build_grid(&s, &VoxelGridConfig::default(), 0.0);
        assert_eq!(g[0].dominant_surface_label, 2);
        s.points[2].surface_label = 5;
        let g = build_grid(&s, &VoxelGridConfig::default(), 0.0);
        assert_eq!(g[0].dominant_surface_label, 5);
    }

    #[test]
    fn rejects_nonpositive_voxel() {
        assert!(VoxelGridConfig { voxel_size: 0.0 }.validate().is_err());
    }
}
