//! Trajectory hashing and duplicate removal.
//!
//! Two refined paths are the same trajectory when they connect the same
//! antennas through the same ordered sequence of (interaction kind, key),
//! where the key is the surface label for reflections, the voxel for a diffuse
//! scatter and the edge index for diffraction.

use std::collections::HashMap;

use crate::path::{Interaction, InteractionKind, PropagationPath};
use crate::scene::Scene;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

struct Fnv1a(u64);

impl Fnv1a {
    fn new() -> Self {
        Fnv1a(FNV_OFFSET)
    }

    fn bytes(&mut self, b: &[u8]) {
        for &x in b {
            self.0 ^= x as u64;
            self.0 = self.0.wrapping_mul(FNV_PRIME);
        }
    }
}

/// Key of one interaction in the trajectory tuple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TrajectoryKey {
    Surface(u32),
    Voxel([i32; 3]),
    Edge(usize),
}

pub fn trajectory_key(i: &Interaction) -> (InteractionKind, TrajectoryKey) {
    let key = match i.kind {
        InteractionKind::Specular => TrajectoryKey::Surface(i.surface_label),
        InteractionKind::Scatter => TrajectoryKey::Voxel(i.voxel_coord),
        InteractionKind::Diffraction => match i.edge_index {
            Some(e) => TrajectoryKey::Edge(e),
            None => TrajectoryKey::Surface(i.surface_label),
        },
    };
    (i.kind, key)
}

/// The exact tuple a trajectory hash summarizes.
pub fn trajectory_tuple(path: &PropagationPath) -> (usize, usize, Vec<(InteractionKind, TrajectoryKey)>) {
    (
        path.tx_index,
        path.rx_index,
        path.interactions.iter().map(trajectory_key).collect(),
    )
}

/// 64-bit FNV-1a over the trajectory tuple.
pub fn hash_path(path: &PropagationPath) -> u64 {
    let mut h = Fnv1a::new();
    h.bytes(&(path.tx_index as u64).to_le_bytes());
    h.bytes(&(path.rx_index as u64).to_le_bytes());
    h.bytes(&(path.interactions.len() as u64).to_le_bytes());
    for i in &path.interactions {
        let (kind, key) = trajectory_key(i);
        h.bytes(&[kind as u8]);
        match key {
            TrajectoryKey::Surface(s) => h.bytes(&s.to_le_bytes()),
            TrajectoryKey::Voxel(v) => v.iter().for_each(|c| h.bytes(&c.to_le_bytes())),
            TrajectoryKey::Edge(e) => h.bytes(&(e as u64).to_le_bytes()),
        }
    }
    h.0
}

/// Keeps the shortest path of every trajectory, sets its hash, and orders the
/// result by (tx, rx, length, hash).
pub fn dedup_paths(paths: Vec<PropagationPath>, scene: &Scene) -> Vec<PropagationPath> {
    let mut best: HashMap<u64, (f64, PropagationPath)> = HashMap::with_capacity(paths.len());
    for mut p in paths {
        let h = hash_path(&p);
        p.trajectory_hash = h;
        let len = p.length(&scene.transmitters[p.tx_index], &scene.receivers[p.rx_index]);
        match best.get_mut(&h) {
            Some(slot) if len < slot.0 => *slot = (len, p),
            Some(_) => {}
            None => {
                best.insert(h, (len, p));
            }
        }
    }
    let mut out: Vec<(f64, PropagationPath)> = best.into_values().collect();
    out.sort_by(|(la, a), (lb, b)| {
        (a.tx_index, a.rx_index)
            .cmp(&(b.tx_index, b.rx_index))
            .then(la.total_cmp(lb))
            .then(a.trajectory_hash.cmp(&b.trajectory_hash))
    });
    out.into_iter().map(|(_, p)| p).collect()
}
