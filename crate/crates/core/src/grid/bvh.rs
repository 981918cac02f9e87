//! Bounding volume hierarchy over DPS bounding boxes.
//!
//! Binned SAH build, flat node array, near-to-far stack traversal.

use std::collections::HashMap;

use smallvec::SmallVec;

use super::{DiscretizedPointSet, VoxelCoord};
use crate::geometry::{slab_inverse, Aabb, Ray, Vec3};

const LEAF_SIZE: usize = 8;
const BINS: usize = 12;

#[derive(Debug, Clone)]
struct Node {
    aabb: Aabb,
    /// Leaf: first primitive slot. Interior: left child index.
    first: u32,
    /// Zero for interior nodes; right child is `first + 1`.
    count: u32,
}

/// What a traversal callback wants next.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Visit {
    Continue,
    /// A hit was found at this distance; farther boxes are pruned.
    Shrink(f64),
    Stop,
}

#[derive(Debug, Clone)]
pub struct AccelStructure {
    nodes: Vec<Node>,
    prims: Vec<u32>,
    /// Box of `prims[i]` at slot `i`, so leaves read their boxes contiguously.
    prim_boxes: Vec<Aabb>,
    voxel_map: HashMap<VoxelCoord, usize>,
}

impl AccelStructure {
    pub fn build(sets: &[DiscretizedPointSet]) -> Self {
        let boxes: Vec<Aabb> = sets.iter().map(|d| d.aabb).collect();
        let voxel_map = sets
            .iter()
            .enumerate()
            .map(|(i, d)| (d.voxel_coord, i))
            .collect();
        let mut prims: Vec<u32> = (0..sets.len() as u32).collect();
        let mut nodes = Vec::with_capacity(2 * sets.len() / LEAF_SIZE + 1);
        if !sets.is_empty() {
            let centers: Vec<Vec3> = boxes.iter().map(|b| b.center()).collect();
            nodes.push(Node {
                aabb: Aabb::empty(),
                first: 0,
                count: 0,
            });
            build_node(&mut nodes, 0, &mut prims, 0, &boxes, &centers);
        }
        let prim_boxes = prims.iter().map(|&p| boxes[p as usize]).collect();
        AccelStructure {
            nodes,
            prims,
            prim_boxes,
            voxel_map,
        }
    }

    pub fn estimated_bytes(n: usize) -> usize {
        let nodes = 2 * n.div_ceil(LEAF_SIZE);
        nodes * std::mem::size_of::<Node>()
            + n * (4 + std::mem::size_of::<Aabb>() + std::mem::size_of::<(VoxelCoord, usize)>() * 2)
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn bounds(&self) -> Aabb {
        self.nodes.first().map(|n| n.aabb).unwrap_or_else(Aabb::empty)
    }

    pub fn dps_at(&self, voxel: &VoxelCoord) -> Option<usize> {
        self.voxel_map.get(voxel).copied()
    }

    /// Every DPS whose box the ray overlaps within `[0, t_max]`, ascending.
    pub fn candidates(&self, ray: &Ray, t_max: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.traverse(ray, t_max, |i, _| {
            out.push(i);
            Visit::Continue
        });
        out.sort_unstable();
        out
    }

    /// Visits DPS boxes hit by the ray, nearer subtrees first. The callback receives
    /// the DPS index and the box entry and exit distances, clipped to `[0, t_max]`.
    pub fn traverse<F>(&self, ray: &Ray, t_max: f64, mut visit: F)
    where
        F: FnMut(usize, (f64, f64)) -> Visit,
    {
        if self.nodes.is_empty() {
            return;
        }
        let inv = slab_inverse(&ray.dir);
        let mut t_max = t_max;
        let mut stack: SmallVec<[(u32, f64); 64]> = SmallVec::new();
        match self.nodes[0].aabb.intersect(&ray.origin, &inv, t_max) {
            Some((t0, _)) => stack.push((0, t0)),
            None => return,
        }
        while let Some((idx, t_entry)) = stack.pop() {
            if t_entry > t_max {
                continue;
            }
            let node = &self.nodes[idx as usize];
            if node.count > 0 {
                let slots = node.first as usize..(node.first + node.count) as usize;
                for (&p, b) in self.prims[slots.clone()].iter().zip(&self.prim_boxes[slots]) {
                    let Some(span) = b.intersect(&ray.origin, &inv, t_max) else {
                        continue;
                    };
                    match visit(p as usize, span) {
                        Visit::Continue => {}
                        Visit::Shrink(t) => t_max = t_max.min(t),
                        Visit::Stop => return,
                    }
                }
                continue;
            }
            let (l, r) = (node.first, node.first + 1);
            let hl = self.nodes[l as usize].aabb.intersect(&ray.origin, &inv, t_max);
            let hr = self.nodes[r as usize].aabb.intersect(&ray.origin, &inv, t_max);
            match (hl, hr) {
                (Some((tl, _)), Some((tr, _))) => {
                    if tl <= tr {
                        stack.push((r, tr));
                        stack.push((l, tl));
                    } else {
                        stack.push((l, tl));
                        stack.push((r, tr));
                    }
                }
                (Some((tl, _)), None) => stack.push((l, tl)),
                (None, Some((tr, _))) => stack.push((r, tr)),
                (None, None) => {}
            }
        }
    }
}

fn build_node(
    nodes: &mut Vec<Node>,
    idx: usize,
    prims: &mut [u32],
    offset: usize,
    boxes: &[Aabb],
    centers: &[Vec3],
) {
    let mut bounds = Aabb::empty();
    let mut cbounds = Aabb::empty();
    for &p in prims.iter() {
        bounds = bounds.merge(&boxes[p as usize]);
        cbounds.grow(&centers[p as usize]);
    }
    nodes[idx].aabb = bounds;

    let make_leaf = |nodes: &mut Vec<Node>| {
        nodes[idx].first = offset as u32;
        nodes[idx].count = prims.len() as u32;
    };
    if prims.len() <= LEAF_SIZE {
        return make_leaf(nodes);
    }

    let extent = cbounds.max - cbounds.min;
    let axis = extent.imax();
    let split = if extent[axis] <= 0.0 {
        prims.len() / 2
    } else {
        sah_split(prims, boxes, centers, axis, cbounds.min[axis], extent[axis])
    };
    let split = if split == 0 || split == prims.len() {
        // degenerate binning, fall back to a median split
        prims.sort_unstable_by(|&a, &b| {
            centers[a as usize][axis].total_cmp(&centers[b as usize][axis])
        });
        prims.len() / 2
    } else {
        split
    };

    let left = nodes.len();
    nodes.push(Node {
        aabb: Aabb::empty(),
        first: 0,
        count: 0,
    });
    nodes.push(Node {
        aabb: Aabb::empty(),
        first: 0,
        count: 0,
    });
    nodes[idx].first = left as u32;
    nodes[idx].count = 0;
    let (lp, rp) = prims.split_at_mut(split);
    build_node(nodes, left, lp, offset, boxes, centers);
    build_node(nodes, left + 1, rp, offset + split, boxes, centers);
}

/// Partitions `prims` in place at the cheapest SAH bin boundary; returns the split point.
fn sah_split(
    prims: &mut [u32],
    boxes: &[Aabb],
    centers: &[Vec3],
    axis: usize,
    lo: f64,
    extent: f64,
) -> usize {
    let bin_of = |p: u32| {
        let b = ((centers[p as usize][axis] - lo) / extent * BINS as f64) as usize;
        b.min(BINS - 1)
    };
    let mut counts = [0usize; BINS];
    let mut bin_boxes = [Aabb::empty(); BINS];
    for &p in prims.iter() {
        let b = bin_of(p);
        counts[b] += 1;
        bin_boxes[b] = bin_boxes[b].merge(&boxes[p as usize]);
    }
    let mut left_area = [0.0; BINS];
    let mut left_count = [0usize; BINS];
    let mut acc = Aabb::empty();
    let mut n = 0;
    for i in 0..BINS {
        acc = acc.merge(&bin_boxes[i]);
        n += counts[i];
        left_area[i] = acc.surface_area();
        left_count[i] = n;
    }
    let mut best = (f64::INFINITY, 0);
    let mut acc = Aabb::empty();
    let mut n = 0;
    for i in (1..BINS).rev() {
        acc = acc.merge(&bin_boxes[i]);
        n += counts[i];
        let cost = left_area[i - 1] * left_count[i - 1] as f64 + acc.surface_area() * n as f64;
        if cost < best.0 {
            best = (cost, i);
        }
    }
    let split_bin = best.1;
    let mut i = 0;
    for j in 0..prims.len() {
        if bin_of(prims[j]) < split_bin {
            prims.swap(i, j);
            i += 1;
        }
    }
    i
}
