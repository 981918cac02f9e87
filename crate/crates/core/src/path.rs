//! Propagation path representation shared by tracing, refinement and EM evaluation.

use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;
use crate::grid::VoxelCoord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InteractionKind {
    Specular,
    Scatter,
    Diffraction,
}

impl InteractionKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            InteractionKind::Specular => "specular",
            InteractionKind::Scatter => "scatter",
            InteractionKind::Diffraction => "diffraction",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interaction {
    pub kind: InteractionKind,
    pub point: Vec3,
    /// Faces the side the path arrives from. For diffraction: face A normal.
    pub normal: Vec3,
    pub surface_label: u32,
    pub material_label: u32,
    pub voxel_coord: VoxelCoord,
    pub edge_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropagationPath {
    pub tx_index: usize,
    pub rx_index: usize,
    /// Empty for line of sight.
    pub interactions: Vec<Interaction>,
    pub refined: bool,
    pub trajectory_hash: u64,
}

impl PropagationPath {
    pub fn los(tx_index: usize, rx_index: usize) -> Self {
        PropagationPath {
            tx_index,
            rx_index,
            interactions: Vec::new(),
            refined: true,
            trajectory_hash: 0,
        }
    }

    pub fn depth(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_los(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn last_kind(&self) -> Option<InteractionKind> {
        self.interactions.last().map(|i| i.kind)
    }

    pub fn has_diffraction(&self) -> bool {
        self.interactions
            .iter()
            .any(|i| i.kind == InteractionKind::Diffraction)
    }

    /// TX, interaction points, RX.
    pub fn vertices(&self, tx: &Vec3, rx: &Vec3) -> Vec<Vec3> {
        let mut v = Vec::with_capacity(self.interactions.len() + 2);
        v.push(*tx);
        v.extend(self.interactions.iter().map(|i| i.point));
        v.push(*rx);
        v
    }

    /// Total length TX -> I_1 -> ... -> I_N -> RX.
    pub fn length(&self, tx: &Vec3, rx: &Vec3) -> f64 {
        crate::refine::path_length(&self.vertices(tx, rx))
    }

    /// Structural invariants: scatter only last, diffraction only alone.
    pub fn is_well_formed(&self) -> bool {
        let n = self.interactions.len();
        self.interactions.iter().enumerate().all(|(k, i)| match i.kind {
            InteractionKind::Specular => true,
            InteractionKind::Scatter => k + 1 == n,
            InteractionKind::Diffraction => n == 1 && i.edge_index.is_some(),
        }) && self
            .interactions
            .iter()
            .all(|i| i.point.iter().all(|c| c.is_finite()))
    }
}
