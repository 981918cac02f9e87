//! JSON and binary scene containers.
//!
//! The binary variant carries the same logical content as the JSON one:
//!
//! ```text
//! "PCRT" 0x01
//! u32 n, n x { f32 x,y,z, nx,ny,nz; u32 surface, material }            points
//! u32 n, n x { f32 sx,sy,sz, ex,ey,ez, na(3), nb(3); u32 mat_a, mat_b } edges
//! u32 n, n x { f32 x,y,z }                                              transmitters
//! u32 n, n x { f32 x,y,z }                                              receivers
//! u32 n, n x { u32 label; f64 eps_r, sigma, scattering }                materials
//! ```
//!
//! All integers and floats are little-endian.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AugmentedPoint, EdgeSegment, Scene};
use crate::em::MaterialParams;
use crate::error::{Error, Result};
use crate::geometry::Vec3;

pub const BINARY_MAGIC: &[u8; 5] = b"PCRT\x01";

#[derive(Serialize, Deserialize)]
struct RawPoint(f64, f64, f64, f64, f64, f64, u32, u32);

#[derive(Serialize, Deserialize)]
struct RawEdge(
    f64, f64, f64, f64, f64, f64, f64, f64, f64, f64, f64, f64, u32, u32,
);

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScene {
    points: Vec<RawPoint>,
    #[serde(default)]
    edges: Vec<RawEdge>,
    #[serde(default)]
    transmitters: Vec<[f64; 3]>,
    #[serde(default)]
    receivers: Vec<[f64; 3]>,
    materials: BTreeMap<u32, MaterialParams>,
}

/// Loads a scene file, detecting the binary variant by its magic bytes.
pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    load_scene_bytes(&bytes)
}

pub fn load_scene_bytes(bytes: &[u8]) -> Result<Scene> {
    if bytes.starts_with(BINARY_MAGIC) {
        from_binary(bytes)
    } else {
        from_json(bytes)
    }
}

pub fn save_scene(scene: &Scene, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_json(scene)).map_err(|e| Error::io(path, e))
}

pub fn save_scene_binary(scene: &Scene, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_binary(scene)).map_err(|e| Error::io(path, e))
}

fn from_json(bytes: &[u8]) -> Result<Scene> {
    let raw: RawScene = serde_json::from_slice(bytes).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let points = raw
        .points
        .into_iter()
        .map(|RawPoint(x, y, z, nx, ny, nz, s, m)| AugmentedPoint {
            position: Vec3::new(x, y, z),
            normal: Vec3::new(nx, ny, nz),
            surface_label: s,
            material_label: m,
        })
        .collect();
    let edges = raw
        .edges
        .into_iter()
        .map(|e| EdgeSegment {
            start: Vec3::new(e.0, e.1, e.2),
            end: Vec3::new(e.3, e.4, e.5),
            normal_a: Vec3::new(e.6, e.7, e.8),
            normal_b: Vec3::new(e.9, e.10, e.11),
            material_a: e.12,
            material_b: e.13,
        })
        .collect();
    Scene::from_parts(
        points,
        edges,
        raw.transmitters.into_iter().map(Vec3::from).collect(),
        raw.receivers.into_iter().map(Vec3::from).collect(),
        raw.materials,
    )
}

/// Serializes with file labels restored.
pub fn to_json(scene: &Scene) -> String {
    let mat = |i: u32| scene.materials.label(i).unwrap_or(i);
    let raw = RawScene {
        points: scene
            .points
            .iter()
            .map(|p| {
                RawPoint(
                    p.position.x,
                    p.position.y,
                    p.position.z,
                    p.normal.x,
                    p.normal.y,
                    p.normal.z,
                    p.surface_label,
                    mat(p.material_label),
                )
            })
            .collect(),
        edges: scene
            .edges
            .iter()
            .map(|e| {
                RawEdge(
                    e.start.x,
                    e.start.y,
                    e.start.z,
                    e.end.x,
                    e.end.y,
                    e.end.z,
                    e.normal_a.x,
                    e.normal_a.y,
                    e.normal_a.z,
                    e.normal_b.x,
                    e.normal_b.y,
                    e.normal_b.z,
                    mat(e.material_a),
                    mat(e.material_b),
                )
            })
            .collect(),
        transmitters: scene.transmitters.iter().map(|v| [v.x, v.y, v.z]).collect(),
        receivers: scene.receivers.iter().map(|v| [v.x, v.y, v.z]).collect(),
        materials: scene.materials.to_map(),
    };
    serde_json::to_string(&raw).expect("scene serialization cannot fail")
}

pub fn to_binary(scene: &Scene) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + scene.points.len() * 32);
    out.extend_from_slice(BINARY_MAGIC);
    let mat = |i: u32| scene.materials.label(i).unwrap_or(i);
    let put_v = |out: &mut Vec<u8>, v: &Vec3| {
        for c in v.iter() {
            out.extend_from_slice(&(*c as f32).to_le_bytes());
        }
    };
    let put_u = |out: &mut Vec<u8>, x: u32| out.extend_from_slice(&x.to_le_bytes());

    put_u(&mut out, scene.points.len() as u32);
    for p in &scene.points {
        put_v(&mut out, &p.position);
        put_v(&mut out, &p.normal);
        put_u(&mut out, p.surface_label);
        put_u(&mut out, mat(p.material_label));
    }
    put_u(&mut out, scene.edges.len() as u32);
    for e in &scene.edges {
        for v in [&e.start, &e.end, &e.normal_a, &e.normal_b] {
            put_v(&mut out, v);
        }
        put_u(&mut out, mat(e.material_a));
        put_u(&mut out, mat(e.material_b));
    }
    for list in [&scene.transmitters, &scene.receivers] {
        put_u(&mut out, list.len() as u32);
        for v in list {
            put_v(&mut out, v);
        }
    }
    let table = scene.materials.to_map();
    put_u(&mut out, table.len() as u32);
    for (label, m) in table {
        put_u(&mut out, label);
        for x in [m.relative_permittivity, m.conductivity, m.scattering_coefficient] {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let chunk = self.bytes.get(self.pos..end).ok_or_else(|| Error::BinaryFormat {
            offset: self.pos,
            message: "unexpected end of data".into(),
        })?;
        self.pos = end;
        Ok(chunk.try_into().unwrap())
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn f32(&mut self) -> Result<f64> {
        Ok(f32::from_le_bytes(self.take()?) as f64)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }

    fn vec3(&mut self) -> Result<Vec3> {
        Ok(Vec3::new(self.f32()?, self.f32()?, self.f32()?))
    }

    /// Section length, sanity-checked against the bytes left.
    fn count(&mut self, record_size: usize) -> Result<usize> {
        let at = self.pos;
        let n = self.u32()? as usize;
        if n.saturating_mul(record_size) > self.bytes.len() - self.pos {
            return Err(Error::BinaryFormat {
                offset: at,
                message: format!("section length {n} exceeds remaining data"),
            });
        }
        Ok(n)
    }
}

fn from_binary(bytes: &[u8]) -> Result<Scene> {
    let mut r = Reader {
        bytes,
        pos: BINARY_MAGIC.len(),
    };
    let n = r.count(32)?;
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        points.push(AugmentedPoint {
            position: r.vec3()?,
            normal: r.vec3()?,
            surface_label: r.u32()?,
            material_label: r.u32()?,
        });
    }
    let n = r.count(56)?;
    let mut edges = Vec::with_capacity(n);
    for _ in 0..n {
        edges.push(EdgeSegment {
            start: r.vec3()?,
            end: r.vec3()?,
            normal_a: r.vec3()?,
            normal_b: r.vec3()?,
            material_a: r.u32()?,
            material_b: r.u32()?,
        });
    }
    let mut antennas = [Vec::new(), Vec::new()];
    for list in antennas.iter_mut() {
        let n = r.count(12)?;
        for _ in 0..n {
            list.push(r.vec3()?);
        }
    }
    let n = r.count(28)?;
    let mut materials = BTreeMap::new();
    for _ in 0..n {
        let label = r.u32()?;
        materials.insert(label, MaterialParams::new(r.f64()?, r.f64()?, r.f64()?));
    }
    if r.pos != bytes.len() {
        return Err(Error::BinaryFormat {
            offset: r.pos,
            message: "trailing bytes".into(),
        });
    }
    let [transmitters, receivers] = antennas;
    Scene::from_parts(points, edges, transmitters, receivers, materials)
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE_POINT: &str = r#"{
        "points": [[0,0,0, 0,0,2, 0,0]],
        "transmitters": [[0,0,1]],
        "receivers": [[1,0,1]],
        "materials": {"0": {"relative_permittivity": 4.0, "conductivity_S_per_m": 0.1, "scattering_coefficient": 0.2}}
    }"#;

    #[test]
    fn json_point_normal_renormalized() {
        let s = load_scene_bytes(ONE_POINT.as_bytes()).unwrap();
        assert_eq!(s.points[0].normal, Vec3::new(0.0, 0.0, 1.0));
        assert_eq!(s.transmitters.len(), 1);
    }

    #[test]
    fn malformed_record_reports_location() {
        let bad = ONE_POINT.replace("0,0,2, 0,0]", "0,0,2, 0]");
        match load_scene_bytes(bad.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = ONE_POINT.replace("\"receivers\"", "\"recievers\"");
        assert!(matches!(
            load_scene_bytes(bad.as_bytes()),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn binary_round_trip_and_truncation() {
        let s = load_scene_bytes(ONE_POINT.as_bytes()).unwrap();
        let bin = to_binary(&s);
        assert!(bin.starts_with(BINARY_MAGIC));
        let back = load_scene_bytes(&bin).unwrap();
        assert_eq!(back, s);
        let err = load_scene_bytes(&bin[..bin.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::BinaryFormat { .. }));
    }
}
