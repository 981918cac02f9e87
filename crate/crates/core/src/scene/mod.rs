//! Augmented point clouds, diffraction edges, antennas and the material table.
//!
//! Material labels are compacted on construction: the table is ordered by the
//! label found in the file and `AugmentedPoint::material_label` /
//! `EdgeSegment::material_*` hold the dense index into it. Surface labels are
//! opaque instance ids and are kept as-is.

mod format;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::em::MaterialParams;
use crate::error::{Error, Result};
use crate::geometry::{Aabb, Vec3};

pub use format::{load_scene, load_scene_bytes, save_scene, save_scene_binary, to_binary, to_json};

/// Minimum edge length in meters.
pub const MIN_EDGE_LENGTH: f64 = 1e-9;
/// Face normals of an edge closer than this (radians) are treated as coplanar.
pub const EDGE_NORMAL_TOLERANCE: f64 = 1e-4;
const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentedPoint {
    pub position: Vec3,
    pub normal: Vec3,
    pub surface_label: u32,
    pub material_label: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeSegment {
    pub start: Vec3,
    pub end: Vec3,
    pub normal_a: Vec3,
    pub normal_b: Vec3,
    pub material_a: u32,
    pub material_b: u32,
}

impl EdgeSegment {
    pub fn length(&self) -> f64 {
        (self.end - self.start).norm()
    }

    pub fn midpoint(&self) -> Vec3 {
        (self.start + self.end) * 0.5
    }
}

/// Dense material table; index `i` corresponds to file label `labels[i]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MaterialTable {
    labels: Vec<u32>,
    params: Vec<MaterialParams>,
}

impl MaterialTable {
    pub fn new(materials: BTreeMap<u32, MaterialParams>) -> Self {
        let (labels, params) = materials.into_iter().unzip();
        MaterialTable { labels, params }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn params(&self) -> &[MaterialParams] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [MaterialParams] {
        &mut self.params
    }

    pub fn get(&self, index: u32) -> Option<&MaterialParams> {
        self.params.get(index as usize)
    }

    /// File label of a dense index.
    pub fn label(&self, index: u32) -> Option<u32> {
        self.labels.get(index as usize).copied()
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Dense index of a file label.
    pub fn index_of(&self, label: u32) -> Option<u32> {
        self.labels.binary_search(&label).ok().map(|i| i as u32)
    }

    /// Same labels with different parameters.
    pub fn with_params(&self, params: Vec<MaterialParams>) -> Self {
        assert_eq!(params.len(), self.labels.len());
        MaterialTable {
            labels: self.labels.clone(),
            params,
        }
    }

    pub fn to_map(&self) -> BTreeMap<u32, MaterialParams> {
        self.labels
            .iter()
            .copied()
            .zip(self.params.iter().copied())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub points: Vec<AugmentedPoint>,
    pub edges: Vec<EdgeSegment>,
    pub transmitters: Vec<Vec3>,
    pub receivers: Vec<Vec3>,
    pub materials: MaterialTable,
    pub bounds: Aabb,
}

impl Scene {
    /// Builds a scene from file-labelled primitives: renormalizes normals,
    /// compacts material labels and rejects anything `validate_scene` flags as an error.
    pub fn from_parts(
        mut points: Vec<AugmentedPoint>,
        mut edges: Vec<EdgeSegment>,
        transmitters: Vec<Vec3>,
        receivers: Vec<Vec3>,
        materials: BTreeMap<u32, MaterialParams>,
    ) -> Result<Scene> {
        if points.is_empty() {
            return Err(Error::Validation("scene has no points".into()));
        }
        let materials = MaterialTable::new(materials);
        let remap = |label: u32| materials.index_of(label).ok_or(Error::UnknownMaterial(label));

        for (i, p) in points.iter_mut().enumerate() {
            p.normal = unit_or_err(p.normal, || format!("point {i} has a zero-length normal"))?;
            p.material_label = remap(p.material_label)?;
        }
        for (i, e) in edges.iter_mut().enumerate() {
            e.normal_a = unit_or_err(e.normal_a, || format!("edge {i} has a zero-length normal"))?;
            e.normal_b = unit_or_err(e.normal_b, || format!("edge {i} has a zero-length normal"))?;
            e.material_a = remap(e.material_a)?;
            e.material_b = remap(e.material_b)?;
        }

        let mut scene = Scene {
            points,
            edges,
            transmitters,
            receivers,
            materials,
            bounds: Aabb::empty(),
        };
        scene.bounds = scene.compute_bounds();

        if let Some(d) = validate_scene(&scene)
            .into_iter()
            .find(|d| d.severity == Severity::Error)
        {
            return Err(Error::Validation(d.to_string()));
        }
        Ok(scene)
    }

    pub fn compute_bounds(&self) -> Aabb {
        let mut b = Aabb::empty();
        for p in &self.points {
            b.grow(&p.position);
        }
        for e in &self.edges {
            b.grow(&e.start);
            b.grow(&e.end);
        }
        b
    }

    /// Copy of the scene with a different material table (same labels).
    pub fn with_material_params(&self, params: Vec<MaterialParams>) -> Scene {
        Scene {
            materials: self.materials.with_params(params),
            ..self.clone()
        }
    }
}

fn unit_or_err(n: Vec3, msg: impl FnOnce() -> String) -> Result<Vec3> {
    let len = n.norm();
    if !(len > 1e-12) || !len.is_finite() {
        return Err(Error::Validation(msg()));
    }
    Ok(n / len)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Entity {
    Scene,
    Point(usize),
    Edge(usize),
    Transmitter(usize),
    Receiver(usize),
    Material(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub entity: Entity,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        let ent = match self.entity {
            Entity::Scene => "scene".to_string(),
            Entity::Point(i) => format!("point {i}"),
            Entity::Edge(i) => format!("edge {i}"),
            Entity::Transmitter(i) => format!("transmitter {i}"),
            Entity::Receiver(i) => format!("receiver {i}"),
            Entity::Material(l) => format!("material {l}"),
        };
        write!(f, "{sev}: {ent}: {}", self.message)
    }
}

fn finite(v: &Vec3) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Checks every scene invariant. An empty result means the scene is well formed.
pub fn validate_scene(scene: &Scene) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut err = |entity, message: String| {
        out.push(Diagnostic {
            severity: Severity::Error,
            entity,
            message,
        })
    };
    let n_mat = scene.materials.len() as u32;

    if scene.points.is_empty() {
        err(Entity::Scene, "scene has no points".into());
    }
    for (i, p) in scene.points.iter().enumerate() {
        if !finite(&p.position) {
            err(Entity::Point(i), "non-finite position".into());
        }
        if !finite(&p.normal) {
            err(Entity::Point(i), "non-finite normal".into());
        } else if (p.normal.norm() - 1.0).abs() > UNIT_TOLERANCE {
            err(Entity::Point(i), format!("normal length {} is not 1", p.normal.norm()));
        }
        if p.material_label >= n_mat {
            err(
                Entity::Point(i),
                format!("material index {} missing from table", p.material_label),
            );
        }
    }

    for (i, e) in scene.edges.iter().enumerate() {
        if ![e.start, e.end, e.normal_a, e.normal_b].iter().all(finite) {
            err(Entity::Edge(i), "non-finite coordinate".into());
            continue;
        }
        if e.length() <= MIN_EDGE_LENGTH {
            err(Entity::Edge(i), "zero-length edge".into());
        }
        let (la, lb) = (e.normal_a.norm(), e.normal_b.norm());
        if (la - 1.0).abs() > UNIT_TOLERANCE || (lb - 1.0).abs() > UNIT_TOLERANCE {
            err(Entity::Edge(i), "face normal is not unit length".into());
        } else if crate::geometry::angle_deg(&e.normal_a, &e.normal_b).to_radians()
            < EDGE_NORMAL_TOLERANCE
        {
            err(Entity::Edge(i), "face normals are parallel (coplanar faces)".into());
        }
        for m in [e.material_a, e.material_b] {
            if m >= n_mat {
                err(Entity::Edge(i), format!("material index {m} missing from table"));
            }
        }
    }

    for (i, t) in scene.transmitters.iter().enumerate() {
        if !finite(t) {
            err(Entity::Transmitter(i), "non-finite position".into());
        }
    }
    for (i, r) in scene.receivers.iter().enumerate() {
        if !finite(r) {
            err(Entity::Receiver(i), "non-finite position".into());
        }
    }

    for (idx, m) in scene.materials.params().iter().enumerate() {
        let label = scene.materials.label(idx as u32).unwrap_or(idx as u32);
        if let Err(msg) = m.check() {
            err(Entity::Material(label), msg);
        }
    }

    if scene.transmitters.is_empty() {
        out.push(Diagnostic {
            severity: Severity::Warning,
            entity: Entity::Scene,
            message: "no transmitters".into(),
        });
    }
    if scene.receivers.is_empty() {
        out.push(Diagnostic {
            severity: Severity::Warning,
            entity: Entity::Scene,
            message: "no receivers".into(),
        });
    }
    out
}
