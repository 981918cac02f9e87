//! Deterministic synthetic scenes with analytic ground truth.
//!
//! Every scene is a union of rectangles. Points sit on a regular grid over
//! each rectangle (spacing `1/sqrt(density)`, cell-centered), optionally
//! displaced along the exact face normal by Gaussian noise. The rectangles
//! double as the oracle geometry: [`image_paths`] enumerates specular paths
//! with the image method.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::em::MaterialParams;
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::scene::{AugmentedPoint, EdgeSegment, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// Square of side `size` in the plane z = 0, centered on the origin.
    Plane { size: f64 },
    /// Walls x = 0 and y = 0 meeting along the z axis.
    Corner { width: f64, height: f64 },
    /// 20 m x 2 m x 2.5 m corridor with a baffle half-way that blocks line of sight.
    CorridorBox,
    /// 4 m x 5 m x 2.5 m room with a table, five materials.
    Room5Mat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub shape: Shape,
    /// Points per square meter.
    pub density: f64,
    /// Standard deviation of the displacement along the normal, meters.
    pub noise: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(shape: Shape, density: f64, noise: f64, seed: u64) -> Self {
        SynthSpec {
            shape,
            density,
            noise,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.density > 0.0) || !(self.noise >= 0.0) {
            return Err(Error::Config("density must be > 0 and noise >= 0".into()));
        }
        Ok(())
    }
}

/// An analytic rectangle `origin + a e1 + b e2`, `a, b` in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub surface_label: u32,
    pub material_label: u32,
    pub origin: Vec3,
    pub e1: Vec3,
    pub e2: Vec3,
    /// Unit normal of the reflecting side.
    pub normal: Vec3,
}

impl Rect {
    fn new(surface_label: u32, material_label: u32, origin: Vec3, e1: Vec3, e2: Vec3, toward: Vec3) -> Self {
        let mut normal = e1.cross(&e2).normalize();
        if normal.dot(&toward) < 0.0 {
            normal = -normal;
        }
        Rect {
            surface_label,
            material_label,
            origin,
            e1,
            e2,
            normal,
        }
    }

    pub fn area(&self) -> f64 {
        self.e1.cross(&self.e2).norm()
    }

    pub fn center(&self) -> Vec3 {
        self.origin + (self.e1 + self.e2) * 0.5
    }

    /// In-rectangle coordinates of a point on its plane.
    fn coords(&self, p: &Vec3) -> (f64, f64) {
        let d = p - self.origin;
        (d.dot(&self.e1) / self.e1.norm_squared(), d.dot(&self.e2) / self.e2.norm_squared())
    }

    /// Distance from `p` (on the plane) to the rectangle border; negative outside.
    pub fn inner_margin(&self, p: &Vec3) -> f64 {
        let (a, b) = self.coords(p);
        let (l1, l2) = (self.e1.norm(), self.e2.norm());
        (a * l1).min((1.0 - a) * l1).min((b * l2).min((1.0 - b) * l2))
    }

    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(&(p - self.origin))
    }

    pub fn mirror(&self, p: &Vec3) -> Vec3 {
        p - self.normal * (2.0 * self.signed_distance(p))
    }

    /// Parameter `t` in `(0, 1)` where segment `a -> b` crosses the rectangle.
    pub fn segment_hit(&self, a: &Vec3, b: &Vec3) -> Option<f64> {
        let da = self.signed_distance(a);
        let db = self.signed_distance(b);
        if da == db {
            return None;
        }
        let t = da / (da - db);
        if !(0.0..=1.0).contains(&t) {
            return None;
        }
        let p = a + (b - a) * t;
        (self.inner_margin(&p) >= 0.0).then_some(t)
    }
}

/// Analytic description of a generated scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub surfaces: Vec<Rect>,
    pub edges: Vec<EdgeSegment>,
    pub transmitters: Vec<Vec3>,
    pub receivers: Vec<Vec3>,
    /// Image-method specular paths (up to two bounces) for every preset link.
    pub image_paths: Vec<ImagePath>,
}

#[derive(Debug, Clone)]
pub struct SynthScene {
    pub scene: Scene,
    pub truth: GroundTruth,
}

struct Layout {
    rects: Vec<Rect>,
    edges: Vec<EdgeSegment>,
    tx: Vec<Vec3>,
    rx: Vec<Vec3>,
    materials: BTreeMap<u32, MaterialParams>,
}

/// Reference materials (ITU-R P.2040 style values near 8 GHz) used by the presets.
pub fn reference_materials() -> BTreeMap<u32, MaterialParams> {
    BTreeMap::from([
        (0, MaterialParams::new(5.24, 0.23, 0.2)),  // concrete
        (1, MaterialParams::new(2.73, 0.06, 0.35)), // plasterboard
        (2, MaterialParams::new(3.91, 0.1, 0.5)),   // brick
        (3, MaterialParams::new(6.31, 0.06, 0.1)),  // glass
        (4, MaterialParams::new(1.99, 0.05, 0.4)),  // wood
    ])
}

fn v(x: f64, y: f64, z: f64) -> Vec3 {
    Vec3::new(x, y, z)
}

/// Six inward-facing faces of the box `[0, l] x [0, w] x [0, h]`:
/// floor, ceiling, x = 0, x = l, y = 0, y = w (labels `first..first + 6`).
fn box_faces(l: f64, w: f64, h: f64, first: u32, materials: [u32; 6]) -> Vec<Rect> {
    let c = v(l / 2.0, w / 2.0, h / 2.0);
    let specs = [
        (v(0.0, 0.0, 0.0), v(l, 0.0, 0.0), v(0.0, w, 0.0)),
        (v(0.0, 0.0, h), v(l, 0.0, 0.0), v(0.0, w, 0.0)),
        (v(0.0, 0.0, 0.0), v(0.0, w, 0.0), v(0.0, 0.0, h)),
        (v(l, 0.0, 0.0), v(0.0, w, 0.0), v(0.0, 0.0, h)),
        (v(0.0, 0.0, 0.0), v(l, 0.0, 0.0), v(0.0, 0.0, h)),
        (v(0.0, w, 0.0), v(l, 0.0, 0.0), v(0.0, 0.0, h)),
    ];
    specs
        .iter()
        .zip(materials)
        .enumerate()
        .map(|(i, (&(o, e1, e2), m))| Rect::new(first + i as u32, m, o, e1, e2, c - (o + (e1 + e2) * 0.5)))
        .collect()
}

fn layout(shape: &Shape) -> Layout {
    let refs = reference_materials();
    match *shape {
        Shape::Plane { size } => Layout {
            rects: vec![Rect::new(
                0,
                0,
                v(-size / 2.0, -size / 2.0, 0.0),
                v(size, 0.0, 0.0),
                v(0.0, size, 0.0),
                Vec3::z(),
            )],
            edges: vec![],
            tx: vec![v(-1.0, 0.0, 1.0)],
            rx: vec![v(1.0, 0.0, 1.0)],
            materials: BTreeMap::from([(0, refs[&0])]),
        },
        Shape::Corner { width, height } => Layout {
            rects: vec![
                Rect::new(0, 0, v(0.0, 0.0, 0.0), v(0.0, width, 0.0), v(0.0, 0.0, height), Vec3::x()),
                Rect::new(1, 1, v(0.0, 0.0, 0.0), v(width, 0.0, 0.0), v(0.0, 0.0, height), Vec3::y()),
            ],
            edges: vec![EdgeSegment {
                start: v(0.0, 0.0, 0.0),
                end: v(0.0, 0.0, height),
                normal_a: Vec3::x(),
                normal_b: Vec3::y(),
                material_a: 0,
                material_b: 1,
            }],
            tx: vec![v(1.0, 2.0, 1.0)],
            rx: vec![v(2.0, 1.0, 1.2)],
            materials: BTreeMap::from([(0, refs[&0]), (1, refs[&2])]),
        },
        Shape::CorridorBox => {
            let (l, w, h) = (20.0, 2.0, 2.5);
            let mut rects = box_faces(l, w, h, 0, [0, 1, 2, 2, 2, 2]);
            // Baffle: a 0.1 m slab at x = 10 spanning y in [0, 1.4], full height.
            let (x0, x1, tip) = (9.95, 10.05, 1.4);
            rects.push(Rect::new(6, 2, v(x0, 0.0, 0.0), v(0.0, tip, 0.0), v(0.0, 0.0, h), -Vec3::x()));
            rects.push(Rect::new(7, 2, v(x1, 0.0, 0.0), v(0.0, tip, 0.0), v(0.0, 0.0, h), Vec3::x()));
            rects.push(Rect::new(8, 2, v(x0, tip, 0.0), v(x1 - x0, 0.0, 0.0), v(0.0, 0.0, h), Vec3::y()));
            let edges = vec![
                EdgeSegment {
                    start: v(x0, tip, 0.0),
                    end: v(x0, tip, h),
                    normal_a: -Vec3::x(),
                    normal_b: Vec3::y(),
                    material_a: 2,
                    material_b: 2,
                },
                EdgeSegment {
                    start: v(x1, tip, 0.0),
                    end: v(x1, tip, h),
                    normal_a: Vec3::x(),
                    normal_b: Vec3::y(),
                    material_a: 2,
                    material_b: 2,
                },
            ];
            Layout {
                rects,
                edges,
                tx: vec![v(5.0, 0.5, 1.5)],
                rx: vec![v(15.0, 0.5, 1.2)],
                materials: BTreeMap::from([(0, refs[&0]), (1, refs[&1]), (2, refs[&2])]),
            }
        }
        Shape::Room5Mat => {
            let (l, w, h) = (4.0, 5.0, 2.5);
            // floor concrete, ceiling plasterboard, x-walls brick, y-walls glass
            let mut rects = box_faces(l, w, h, 0, [0, 1, 2, 2, 3, 3]);
            rects.push(Rect::new(6, 4, v(1.5, 2.0, 0.75), v(1.0, 0.0, 0.0), v(0.0, 1.0, 0.0), Vec3::z()));
            Layout {
                rects,
                edges: vec![],
                tx: vec![v(1.0, 1.0, 2.0)],
                rx: vec![
                    v(3.0, 4.0, 1.2),
                    v(1.0, 4.2, 1.5),
                    v(3.2, 1.2, 1.0),
                    v(2.1, 2.4, 1.6),
                    v(0.8, 2.6, 1.1),
                    v(3.4, 3.1, 2.0),
                ],
                materials: refs,
            }
        }
    }
}

/// Generates the point cloud, preset antennas and analytic ground truth.
pub fn generate(spec: &SynthSpec) -> Result<SynthScene> {
    spec.validate()?;
    let lay = layout(&spec.shape);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal_noise = Normal::new(0.0, spec.noise).map_err(|e| Error::Config(e.to_string()))?;
    let per_meter = spec.density.sqrt();

    let mut points = Vec::new();
    for r in &lay.rects {
        let n1 = ((r.e1.norm() * per_meter).round() as usize).max(1);
        let n2 = ((r.e2.norm() * per_meter).round() as usize).max(1);
        for i in 0..n1 {
            for j in 0..n2 {
                let a = (i as f64 + 0.5) / n1 as f64;
                let b = (j as f64 + 0.5) / n2 as f64;
                let mut p = r.origin + r.e1 * a + r.e2 * b;
                if spec.noise > 0.0 {
                    p += r.normal * normal_noise.sample(&mut rng);
                }
                points.push(AugmentedPoint {
                    position: p,
                    normal: r.normal,
                    surface_label: r.surface_label,
                    material_label: r.material_label,
                });
            }
        }
    }

    let scene = Scene::from_parts(points, lay.edges.clone(), lay.tx.clone(), lay.rx.clone(), lay.materials)?;
    let mut image = Vec::new();
    for (t, tx) in lay.tx.iter().enumerate() {
        for (r, rx) in lay.rx.iter().enumerate() {
            image.extend(image_paths(&lay.rects, tx, rx, 2).into_iter().map(|mut p| {
                p.tx_index = t;
                p.rx_index = r;
                p
            }));
        }
    }
    Ok(SynthScene {
        scene,
        truth: GroundTruth {
            surfaces: lay.rects,
            edges: lay.edges,
            transmitters: lay.tx,
            receivers: lay.rx,
            image_paths: image,
        },
    })
}

/// A specular path found by the image method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagePath {
    pub tx_index: usize,
    pub rx_index: usize,
    pub surface_labels: Vec<u32>,
    pub points: Vec<Vec3>,
    pub length: f64,
}

/// Whether segment `a -> b` is blocked by any rectangle other than those in `skip`.
fn occluded(rects: &[Rect], a: &Vec3, b: &Vec3, skip: &[usize]) -> bool {
    rects.iter().enumerate().any(|(i, r)| {
        !skip.contains(&i) && r.segment_hit(a, b).is_some_and(|t| t > 1e-9 && t < 1.0 - 1e-9)
    })
}

/// All unoccluded specular paths with at most `max_order` reflections
/// (including the direct path), found by mirroring the transmitter.
pub fn image_paths(rects: &[Rect], tx: &Vec3, rx: &Vec3, max_order: usize) -> Vec<ImagePath> {
    let mut out = Vec::new();
    if !occluded(rects, tx, rx, &[]) {
        out.push(ImagePath {
            tx_index: 0,
            rx_index: 0,
            surface_labels: vec![],
            points: vec![],
            length: (rx - tx).norm(),
        });
    }
    let mut seq = Vec::new();
    enumerate(rects, tx, rx, max_order, &mut seq, &mut out);
    out
}

fn enumerate(rects: &[Rect], tx: &Vec3, rx: &Vec3, max_order: usize, seq: &mut Vec<usize>, out: &mut Vec<ImagePath>) {
    if seq.len() == max_order {
        return;
    }
    for i in 0..rects.len() {
        if seq.last() == Some(&i) {
            continue;
        }
        seq.push(i);
        if let Some(p) = solve_sequence(rects, tx, rx, seq) {
            out.push(p);
        }
        enumerate(rects, tx, rx, max_order, seq, out);
        seq.pop();
    }
}

fn solve_sequence(rects: &[Rect], tx: &Vec3, rx: &Vec3, seq: &[usize]) -> Option<ImagePath> {
    // images[k]: transmitter mirrored through rects seq[0..=k]
    let mut images = Vec::with_capacity(seq.len());
    let mut img = *tx;
    for &i in seq {
        img = rects[i].mirror(&img);
        images.push(img);
    }
    // Walk back from the receiver.
    let mut points = vec![Vec3::zeros(); seq.len()];
    let mut target = *rx;
    for k in (0..seq.len()).rev() {
        let r = &rects[seq[k]];
        let t = r.segment_hit(&images[k], &target)?;
        points[k] = images[k] + (target - images[k]) * t;
        target = points[k];
    }
    // Reflections happen on the front side, with both neighbours in front.
    let mut verts = vec![*tx];
    verts.extend(points.iter().copied());
    verts.push(*rx);
    for k in 0..seq.len() {
        let r = &rects[seq[k]];
        if r.signed_distance(&verts[k]) <= 1e-9 || r.signed_distance(&verts[k + 2]) <= 1e-9 {
            return None;
        }
    }
    for k in 0..=seq.len() {
        let mut skip = Vec::new();
        if k > 0 {
            skip.push(seq[k - 1]);
        }
        if k < seq.len() {
            skip.push(seq[k]);
        }
        if occluded(rects, &verts[k], &verts[k + 1], &skip) {
            return None;
        }
    }
    Some(ImagePath {
        tx_index: 0,
        rx_index: 0,
        surface_labels: seq.iter().map(|&i| rects[i].surface_label).collect(),
        length: crate::refine::path_length(&verts),
        points,
    })
}
