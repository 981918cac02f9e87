//! Receiver-to-DPS visibility matrix.
//!
//! One segment test per (receiver, reception point) pair, stored as a packed
//! row-major bitset: row = receiver, column = DPS.

use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::isect::Caster;

#[derive(Debug, Clone, PartialEq)]
pub struct VisibilityMatrix {
    receivers: usize,
    sets: usize,
    words_per_row: usize,
    bits: Vec<u64>,
    /// Construction wall time, milliseconds.
    pub build_ms: f64,
}

impl VisibilityMatrix {
    pub fn new(receivers: usize, sets: usize) -> Self {
        let words_per_row = sets.div_ceil(64);
        VisibilityMatrix {
            receivers,
            sets,
            words_per_row,
            bits: vec![0; receivers * words_per_row],
            build_ms: 0.0,
        }
    }

    pub fn num_receivers(&self) -> usize {
        self.receivers
    }

    pub fn num_sets(&self) -> usize {
        self.sets
    }

    pub fn get(&self, rx: usize, dps: usize) -> bool {
        debug_assert!(rx < self.receivers && dps < self.sets);
        self.bits[rx * self.words_per_row + dps / 64] >> (dps % 64) & 1 == 1
    }

    pub fn set(&mut self, rx: usize, dps: usize, value: bool) {
        let w = &mut self.bits[rx * self.words_per_row + dps / 64];
        let mask = 1u64 << (dps % 64);
        if value {
            *w |= mask;
        } else {
            *w &= !mask;
        }
    }

    pub fn count_visible(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Little-endian 64-bit words, row-major, one bit per entry.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.bits.iter().flat_map(|w| w.to_le_bytes()).collect()
    }
}

/// Tests every receiver against every reception point.
pub fn build_visibility(caster: &Caster) -> VisibilityMatrix {
    let start = Instant::now();
    let receivers = &caster.scene.receivers;
    let sets = caster.sets;
    let mut m = VisibilityMatrix::new(receivers.len(), sets.len());
    let wpr = m.words_per_row;
    if wpr > 0 {
        m.bits
            .par_chunks_mut(wpr)
            .enumerate()
            .flat_map_iter(|(r, row)| row.iter_mut().enumerate().map(move |(w, word)| (r, w, word)))
            .for_each(|(r, w, word)| {
                let rx = receivers[r];
                let hi = ((w + 1) * 64).min(sets.len());
                for d in w * 64..hi {
                    if caster.test_visibility(&rx, &sets[d].reception_point) {
                        *word |= 1u64 << (d % 64);
                    }
                }
            });
    }
    m.build_ms = start.elapsed().as_secs_f64() * 1e3;
    m
}

/// Receivers that see the reception point of DPS `dps_index`.
pub fn visible_receivers(matrix: &VisibilityMatrix, dps_index: usize) -> Result<Vec<usize>> {
    if dps_index >= matrix.sets {
        return Err(Error::IndexOutOfRange {
            index: dps_index,
            len: matrix.sets,
        });
    }
    Ok((0..matrix.receivers).filter(|&r| matrix.get(r, dps_index)).collect())
}
