//! Run configuration: an optional JSON file overlaid by command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use pcrt::em::EmConfig;
use pcrt::grid::VoxelGridConfig;
use pcrt::isect::IntersectionConfig;
use pcrt::learn::TrainConfig;
use pcrt::pipeline::SimulationConfig;
use pcrt::refine::RefinementConfig;
use pcrt::trace::TraceConfig;

/// Everything a command can be configured with. Keys mirror the flag names.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scene: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub threads: Option<usize>,
    pub seed: Option<u64>,
    pub grid: VoxelGridConfig,
    pub intersection: IntersectionConfig,
    pub trace: TraceConfig,
    pub refine: RefinementConfig,
    pub em: EmConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("config: reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("config: parsing {}", path.display()))
    }

    pub fn simulation(&self) -> SimulationConfig {
        SimulationConfig {
            grid: self.grid,
            intersection: self.intersection,
            trace: self.trace,
            refine: self.refine,
            em: self.em,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut t = self.train;
        if let Some(seed) = self.seed {
            t.seed = seed;
        }
        t
    }
}

/// Flags shared by every command that reads a scene.
#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Scene file (JSON or binary).
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,

    /// Voxel edge length, m.
    #[arg(long)]
    pub voxel_size: Option<f64>,
    /// Disk radius of every point, m.
    #[arg(long)]
    pub point_radius: Option<f64>,
    /// Depth attenuation of the disk weights, 1/m.
    #[arg(long)]
    pub depth_attenuation: Option<f64>,

    #[arg(long)]
    pub refine_max_iters: Option<usize>,
    #[arg(long)]
    pub refine_retries: Option<usize>,
    #[arg(long)]
    pub refine_conv_threshold: Option<f64>,
    #[arg(long)]
    pub refine_angle_threshold_deg: Option<f64>,
    /// m.
    #[arg(long)]
    pub refine_distance_threshold: Option<f64>,

    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub scattering: Option<bool>,
    #[arg(long)]
    pub diffraction: Option<bool>,

    /// Hz.
    #[arg(long)]
    pub center_freq: Option<f64>,
    /// Hz.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    #[arg(long)]
    pub freq_samples: Option<usize>,

    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
}

impl CommonArgs {
    /// File values (or defaults) with every given flag applied on top.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        set(&mut c.scene, self.scene.clone());
        set(&mut c.output, self.out.clone());
        set(&mut c.threads, self.threads);
        set(&mut c.seed, self.seed);
        if let Some(v) = self.voxel_size {
            c.grid.voxel_size = v;
            // one DPS stands for one voxel face of surface
            c.em.scatter_area = v * v;
        }
        set_val(&mut c.intersection.point_radius, self.point_radius);
        set_val(&mut c.intersection.depth_attenuation, self.depth_attenuation);
        set_val(&mut c.refine.max_iterations, self.refine_max_iters);
        set_val(&mut c.refine.retry_count, self.refine_retries);
        set_val(&mut c.refine.convergence_threshold, self.refine_conv_threshold);
        set_val(&mut c.refine.angle_threshold_deg, self.refine_angle_threshold_deg);
        set_val(&mut c.refine.distance_threshold, self.refine_distance_threshold);
        set_val(&mut c.trace.max_depth, self.max_depth);
        set_val(&mut c.trace.enable_scattering, self.scattering);
        set_val(&mut c.trace.enable_diffraction, self.diffraction);
        set_val(&mut c.em.center_frequency, self.center_freq);
        set_val(&mut c.em.bandwidth, self.bandwidth);
        set_val(&mut c.em.num_freq_samples, self.freq_samples);
        set_val(&mut c.train.learning_rate, self.lr);
        set_val(&mut c.train.iterations, self.iterations);
        c.simulation().validate().context("config")?;
        c.train_config().validate().context("config")?;
        Ok(c)
    }
}

fn set<T>(slot: &mut Option<T>, value: Option<T>) {
    if value.is_some() {
        *slot = value;
    }
}

fn set_val<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        let err = serde_json::from_str::<RunConfig>(r#"{"grid": {"voxel_size": 0.1}, "bogus": 1}"#);
        assert!(err.is_err());
        let err = serde_json::from_str::<RunConfig>(r#"{"refine": {"max_iter": 3}}"#);
        assert!(err.is_err());
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"trace": {"max_depth": 2}}"#).unwrap();
        assert_eq!(c.trace.max_depth, 2);
        assert!(c.trace.enable_scattering);
        assert_eq!(c.refine, RefinementConfig::default());
    }
}
