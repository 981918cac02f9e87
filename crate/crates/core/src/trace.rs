//! Coarse path candidates.
//!
//! One ray is launched from the transmitter towards every reception point and
//! followed through specular bounces up to the maximum depth. Every hit whose
//! DPS is visible from a receiver yields a specular candidate (the chain so far
//! plus that receiver) and, with scattering enabled, a diffuse path ending at
//! the hit. The ray population never grows: a bounce replaces its ray.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{reflect, Ray};
use crate::isect::{Caster, SurfaceHit};
use crate::path::{Interaction, InteractionKind, PropagationPath};
use crate::vis::VisibilityMatrix;

/// Upper bound on `max_depth`.
pub const MAX_DEPTH_LIMIT: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TraceConfig {
    pub max_depth: usize,
    pub enable_scattering: bool,
    pub enable_diffraction: bool,
}

impl Default for TraceConfig {
    fn default() -> Self {
        TraceConfig {
            max_depth: 5,
            enable_scattering: true,
            enable_diffraction: false,
        }
    }
}

impl TraceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth == 0 || self.max_depth > MAX_DEPTH_LIMIT {
            return Err(Error::Config(format!(
                "max_depth must be in 1..={MAX_DEPTH_LIMIT}, got {}",
                self.max_depth
            )));
        }
        Ok(())
    }
}

/// Coarse candidates of one transmitter.
#[derive(Debug, Clone, Default)]
pub struct TraceOutput {
    /// All-specular chains to be refined.
    pub specular: Vec<PropagationPath>,
    /// Diffuse paths; already valid as traced.
    pub scatter: Vec<PropagationPath>,
    /// Rays launched (one per DPS).
    pub launched: usize,
    /// `active[k]`: rays still alive after `k + 1` hits.
    pub active: Vec<usize>,
}

/// One zero-interaction path per receiver with a clear line of sight.
pub fn trace_los(caster: &Caster, tx_index: usize) -> Vec<PropagationPath> {
    let tx = caster.scene.transmitters[tx_index];
    caster
        .scene
        .receivers
        .iter()
        .enumerate()
        .filter(|(_, rx)| caster.test_visibility(&tx, rx))
        .map(|(r, _)| PropagationPath::los(tx_index, r))
        .collect()
}

fn interaction(hit: &SurfaceHit, kind: InteractionKind) -> Interaction {
    Interaction {
        kind,
        point: hit.position,
        normal: hit.normal,
        surface_label: hit.surface_label,
        material_label: hit.material_label,
        voxel_coord: hit.voxel_coord,
        edge_index: None,
    }
}

#[derive(Default)]
struct RayCandidates {
    specular: Vec<PropagationPath>,
    scatter: Vec<PropagationPath>,
    depth_reached: usize,
}

/// Emits the candidates ending at the latest hit of `chain`.
fn emit(
    caster: &Caster,
    vis: &VisibilityMatrix,
    tx_index: usize,
    chain: &[Interaction],
    h: &SurfaceHit,
    config: &TraceConfig,
    out: &mut RayCandidates,
) {
    for r in 0..vis.num_receivers() {
        if !vis.get(r, h.dps_index) {
            continue;
        }
        out.specular.push(PropagationPath {
            tx_index,
            rx_index: r,
            interactions: chain.to_vec(),
            refined: false,
            trajectory_hash: 0,
        });
        if config.enable_scattering {
            let rx = caster.scene.receivers[r];
            // Diffuse emission leaves on the lit side only.
            if h.normal.dot(&(rx - h.position)) > 0.0 && caster.test_visibility(&rx, &h.position) {
                let mut interactions = chain.to_vec();
                interactions.last_mut().unwrap().kind = InteractionKind::Scatter;
                out.scatter.push(PropagationPath {
                    tx_index,
                    rx_index: r,
                    interactions,
                    refined: true,
                    trajectory_hash: 0,
                });
            }
        }
    }
}

fn follow_ray(
    caster: &Caster,
    vis: &VisibilityMatrix,
    tx_index: usize,
    target: usize,
    config: &TraceConfig,
) -> RayCandidates {
    let tx = caster.scene.transmitters[tx_index];
    let mut out = RayCandidates::default();
    let Some((ray, _)) = Ray::towards(tx, caster.sets[target].reception_point) else {
        return out;
    };
    let mut dir = ray.dir;
    let mut hit = caster.cast_ray(&ray);
    let mut chain: Vec<Interaction> = Vec::with_capacity(config.max_depth);

    while let Some(h) = hit {
        chain.push(interaction(&h, InteractionKind::Specular));
        out.depth_reached = chain.len();
        emit(caster, vis, tx_index, &chain, &h, config, &mut out);
        if chain.len() >= config.max_depth {
            break;
        }
        dir = reflect(&dir, &h.normal);
        hit = caster.cast_from_hit(&h, &dir);
    }
    out
}

/// Launches one ray per DPS and collects coarse candidates, ordered by
/// (DPS, depth, receiver).
pub fn trace_bounces(
    caster: &Caster,
    vis: &VisibilityMatrix,
    tx_index: usize,
    config: &TraceConfig,
) -> TraceOutput {
    let per_ray: Vec<RayCandidates> = (0..caster.sets.len())
        .into_par_iter()
        .map(|d| follow_ray(caster, vis, tx_index, d, config))
        .collect();

    let mut out = TraceOutput {
        launched: per_ray.len(),
        active: vec![0; config.max_depth],
        ..Default::default()
    };
    for rc in per_ray {
        for k in 0..rc.depth_reached {
            out.active[k] += 1;
        }
        out.specular.extend(rc.specular);
        out.scatter.extend(rc.scatter);
    }
    debug_assert!(out.active.windows(2).all(|w| w[1] <= w[0]));
    debug_assert!(out.active.first().is_none_or(|&a| a <= out.launched));
    out
}

/// One candidate per (edge, receiver) at the edge midpoint.
pub fn trace_diffraction(caster: &Caster, tx_index: usize) -> Vec<PropagationPath> {
    let scene = caster.scene;
    let mut out = Vec::with_capacity(scene.edges.len() * scene.receivers.len());
    for (e, edge) in scene.edges.iter().enumerate() {
        for r in 0..scene.receivers.len() {
            out.push(PropagationPath {
                tx_index,
                rx_index: r,
                interactions: vec![Interaction {
                    kind: InteractionKind::Diffraction,
                    point: edge.midpoint(),
                    normal: edge.normal_a,
                    surface_label: e as u32,
                    material_label: edge.material_a,
                    voxel_coord: [0, 0, 0],
                    edge_index: Some(e),
                }],
                refined: false,
                trajectory_hash: 0,
            });
        }
    }
    out
}
