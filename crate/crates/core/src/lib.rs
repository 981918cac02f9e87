//! Radio propagation ray tracing on augmented point clouds.
//!
//! The pipeline: load a [`scene::Scene`], group its points into voxels
//! ([`grid`]), build the receiver visibility matrix ([`vis`]), launch and
//! bounce rays ([`trace`]), refine the coarse candidates with Fermat's
//! principle ([`refine`]), remove duplicates ([`dedup`]) and evaluate the
//! channel with a differentiable EM model ([`em`]) whose material parameters
//! can be learned from ground-truth channels ([`learn`]).

pub mod dedup;
pub mod em;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod isect;
pub mod learn;
pub mod path;
pub mod pipeline;
pub mod refine;
pub mod scene;
pub mod synthgen;
pub mod trace;
pub mod vis;

pub use error::{Error, Result};
