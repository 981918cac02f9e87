#![allow(dead_code)]

use std::collections::BTreeMap;

use pcrt::em::MaterialParams;
use pcrt::geometry::Vec3;
use pcrt::pipeline::SimulationConfig;
use pcrt::scene::{AugmentedPoint, Scene};
use pcrt::synthgen::{generate, Shape, SynthScene, SynthSpec};

pub fn synth(shape: Shape, noise: f64, seed: u64) -> SynthScene {
    generate(&SynthSpec::new(shape, 2500.0, noise, seed)).unwrap()
}

pub fn corner() -> Shape {
    Shape::Corner {
        width: 4.0,
        height: 2.5,
    }
}

pub fn plane() -> Shape {
    Shape::Plane { size: 4.0 }
}

pub fn with_depth(depth: usize) -> SimulationConfig {
    let mut cfg = SimulationConfig::default();
    cfg.trace.max_depth = depth;
    cfg
}

/// Square grid of points in the plane z = `z`, normals +z.
pub fn grid_points(z: f64, half: f64, spacing: f64, label: u32) -> Vec<AugmentedPoint> {
    let n = (2.0 * half / spacing).round() as i64;
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            out.push(AugmentedPoint {
                position: Vec3::new(
                    -half + (i as f64 + 0.5) * spacing,
                    -half + (j as f64 + 0.5) * spacing,
                    z,
                ),
                normal: Vec3::z(),
                surface_label: label,
                material_label: 0,
            });
        }
    }
    out
}

pub fn one_material() -> BTreeMap<u32, MaterialParams> {
    BTreeMap::from([(0, MaterialParams::default())])
}

pub fn scene_of(points: Vec<AugmentedPoint>, tx: Vec<Vec3>, rx: Vec<Vec3>) -> Scene {
    Scene::from_parts(points, vec![], tx, rx, one_material()).unwrap()
}
