//! End-to-end simulation: grid, visibility, tracing, refinement, dedup, EM.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dedup::dedup_paths;
use crate::em::{ChannelImpulseResponse, EmConfig, PathGeometry, Tap};
use crate::error::Result;
use crate::grid::{build_grid, AccelStructure, DiscretizedPointSet, VoxelGridConfig};
use crate::isect::{Caster, IntersectionConfig};
use crate::path::{InteractionKind, PropagationPath};
use crate::refine::{refine_diffraction, refine_specular_with_stats, RefineStats, RefinementConfig};
use crate::scene::Scene;
use crate::trace::{trace_bounces, trace_diffraction, trace_los, TraceConfig};
use crate::vis::{build_visibility, VisibilityMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub grid: VoxelGridConfig,
    pub intersection: IntersectionConfig,
    pub trace: TraceConfig,
    pub refine: RefinementConfig,
    pub em: EmConfig,
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.intersection.validate()?;
        self.trace.validate()?;
        self.refine.validate()?;
        self.em.validate()
    }
}

/// Voxel grid and hierarchy over it.
#[derive(Debug)]
pub struct Prepared {
    pub sets: Vec<DiscretizedPointSet>,
    pub accel: AccelStructure,
    pub grid_ms: f64,
}

impl Prepared {
    pub fn new(scene: &Scene, config: &SimulationConfig) -> Self {
        let start = Instant::now();
        let sets = build_grid(scene, &config.grid, config.intersection.point_radius);
        let accel = AccelStructure::build(&sets);
        Prepared {
            sets,
            accel,
            grid_ms: ms_since(start),
        }
    }

    pub fn caster<'a>(&'a self, scene: &'a Scene, config: &'a SimulationConfig) -> Caster<'a> {
        Caster::new(scene, &self.sets, &self.accel, &config.intersection)
    }
}

fn ms_since(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Path-finding counters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PathStats {
    pub launched: usize,
    pub specular_candidates: usize,
    pub candidate_groups: usize,
    pub scatter_candidates: usize,
    pub diffraction_candidates: usize,
    pub refine: RefineStats,
}

/// All refined paths (before dedup) of every transmitter, in a fixed order.
pub fn find_paths(
    caster: &Caster,
    vis: &VisibilityMatrix,
    config: &SimulationConfig,
) -> (Vec<PropagationPath>, PathStats) {
    let mut stats = PathStats::default();
    let mut paths = Vec::new();
    for t in 0..caster.scene.transmitters.len() {
        paths.extend(trace_los(caster, t));
        let traced = trace_bounces(caster, vis, t, &config.trace);
        stats.launched += traced.launched;
        stats.specular_candidates += traced.specular.len();
        stats.scatter_candidates += traced.scatter.len();

        let (refined, groups, rs) = refine_grouped(caster, traced.specular, &config.refine);
        stats.candidate_groups += groups;
        stats.refine.merge(&rs);
        paths.extend(refined);
        paths.extend(traced.scatter);

        if config.trace.enable_diffraction {
            let cands = trace_diffraction(caster, t);
            stats.diffraction_candidates += cands.len();
            let refined: Vec<_> = cands
                .par_iter()
                .filter_map(|p| refine_diffraction(p, caster, &config.refine))
                .collect();
            paths.extend(refined);
        }
    }
    (paths, stats)
}

/// Refines specular candidates grouped by (tx, rx, surface-label chain).
///
/// Candidates of one group describe the same reflection sequence on the same
/// surfaces, so they converge to the same path: members are tried in trace
/// order and the group stops at its first validated path, or gives up after
/// `group_attempts` failures.
fn refine_grouped(
    caster: &Caster,
    candidates: Vec<PropagationPath>,
    config: &RefinementConfig,
) -> (Vec<PropagationPath>, usize, RefineStats) {
    let mut index: HashMap<(usize, usize, Vec<u32>), usize> = HashMap::new();
    let mut groups: Vec<Vec<PropagationPath>> = Vec::new();
    for c in candidates {
        let key = (
            c.tx_index,
            c.rx_index,
            c.interactions.iter().map(|i| i.surface_label).collect::<Vec<_>>(),
        );
        let g = *index.entry(key).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(c);
    }
    let n_groups = groups.len();
    let results: Vec<(Option<PropagationPath>, RefineStats)> = groups
        .par_iter()
        .map(|members| {
            let mut st = RefineStats::default();
            let limit = match config.group_attempts {
                0 => usize::MAX,
                n => n,
            };
            let found = members
                .iter()
                .take(limit)
                .find_map(|c| refine_specular_with_stats(c, caster, config, &mut st));
            (found, st)
        })
        .collect();
    let mut stats = RefineStats::default();
    let mut out = Vec::new();
    for (p, st) in results {
        stats.merge(&st);
        out.extend(p);
    }
    (out, n_groups, stats)
}

/// Per-stage wall times in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Timing {
    pub grid_ms: f64,
    pub vis_ms: f64,
    pub trace_refine_ms: f64,
    pub dedup_ms: f64,
    pub em_ms: f64,
    pub total_ms: f64,
}

impl Timing {
    pub fn report(&self, links: usize) -> String {
        let mut s = String::new();
        let rows = [
            ("grid", self.grid_ms),
            ("vis", self.vis_ms),
            ("trace+refine", self.trace_refine_ms),
            ("dedup", self.dedup_ms),
            ("em", self.em_ms),
            ("total", self.total_ms),
        ];
        for (name, v) in rows {
            let _ = writeln!(s, "{name:<14}{v:>12.3} ms");
        }
        let per_link = if links == 0 {
            0.0
        } else {
            (self.grid_ms + self.vis_ms + self.trace_refine_ms + self.dedup_ms) / links as f64
        };
        let _ = writeln!(s, "{:<14}{per_link:>12.3} ms", "paths/link");
        s
    }
}

/// Channel of one (tx, rx) pair.
#[derive(Debug, Clone)]
pub struct LinkResponse {
    pub tx_index: usize,
    pub rx_index: usize,
    pub response: ChannelImpulseResponse,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    /// Deduplicated paths ordered by (tx, rx, length).
    pub paths: Vec<PropagationPath>,
    /// Complex coefficient of each path at the center frequency.
    pub coefficients: Vec<Complex64>,
    pub links: Vec<LinkResponse>,
    pub stats: PathStats,
    pub timing: Timing,
    pub visibility: VisibilityMatrix,
}

/// Paths only: grid, visibility, tracing, refinement and dedup.
pub fn compute_paths(scene: &Scene, config: &SimulationConfig) -> Result<(Vec<PropagationPath>, PathStats, Timing)> {
    let sim = run(scene, config, false)?;
    Ok((sim.paths, sim.stats, sim.timing))
}

pub fn simulate(scene: &Scene, config: &SimulationConfig) -> Result<Simulation> {
    run(scene, config, true)
}

fn run(scene: &Scene, config: &SimulationConfig, with_em: bool) -> Result<Simulation> {
    config.validate()?;
    let start = Instant::now();
    let prepared = Prepared::new(scene, config);
    let caster = prepared.caster(scene, config);
    let visibility = build_visibility(&caster);

    let t = Instant::now();
    let (paths, stats) = find_paths(&caster, &visibility, config);
    let trace_refine_ms = ms_since(t);

    let t = Instant::now();
    let paths = dedup_paths(paths, scene);
    let dedup_ms = ms_since(t);

    let t = Instant::now();
    let (coefficients, links) = if with_em {
        evaluate_links(scene, &paths, &config.em)
    } else {
        (Vec::new(), Vec::new())
    };
    let em_ms = ms_since(t);

    Ok(Simulation {
        paths,
        coefficients,
        links,
        stats,
        timing: Timing {
            grid_ms: prepared.grid_ms,
            vis_ms: visibility.build_ms,
            trace_refine_ms,
            dedup_ms,
            em_ms,
            total_ms: ms_since(start),
        },
        visibility,
    })
}

fn evaluate_links(scene: &Scene, paths: &[PropagationPath], em: &EmConfig) -> (Vec<Complex64>, Vec<LinkResponse>) {
    let params = scene.materials.params();
    let taps: Vec<Tap> = paths
        .par_iter()
        .map(|p| {
            let g = PathGeometry::new(p, &scene.transmitters[p.tx_index], &scene.receivers[p.rx_index], em);
            Tap {
                delay: g.delay(),
                coefficient: g.value(params, em),
            }
        })
        .collect();
    let mut links = Vec::new();
    for t in 0..scene.transmitters.len() {
        for r in 0..scene.receivers.len() {
            let link_taps: Vec<Tap> = paths
                .iter()
                .zip(&taps)
                .filter(|(p, _)| p.tx_index == t && p.rx_index == r)
                .map(|(_, tap)| *tap)
                .collect();
            links.push(LinkResponse {
                tx_index: t,
                rx_index: r,
                response: ChannelImpulseResponse::from_taps(link_taps, em),
            });
        }
    }
    (taps.iter().map(|t| t.coefficient).collect(), links)
}

#[derive(Serialize)]
struct DumpRecord {
    tx: usize,
    rx: usize,
    kind_sequence: Vec<&'static str>,
    points: Vec<[f64; 3]>,
    labels: Vec<u32>,
    length_m: f64,
    delay_s: f64,
    #[serde(rename = "|a|")]
    magnitude: f64,
    phase: f64,
}

/// JSON Lines, one path per line.
pub fn path_dump(scene: &Scene, paths: &[PropagationPath], coefficients: &[Complex64]) -> String {
    let mut out = String::new();
    for (i, p) in paths.iter().enumerate() {
        let length_m = p.length(&scene.transmitters[p.tx_index], &scene.receivers[p.rx_index]);
        let a = coefficients.get(i).copied().unwrap_or_default();
        let rec = DumpRecord {
            tx: p.tx_index,
            rx: p.rx_index,
            kind_sequence: p.interactions.iter().map(|i| i.kind.as_str()).collect(),
            points: p.interactions.iter().map(|i| [i.point.x, i.point.y, i.point.z]).collect(),
            labels: p.interactions.iter().map(|i| i.surface_label).collect(),
            length_m,
            delay_s: length_m / crate::em::SPEED_OF_LIGHT,
            magnitude: a.norm(),
            phase: a.arg(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("path record serializes"));
        out.push('\n');
    }
    out
}

/// One row of the depth-scaling benchmark.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub depth: usize,
    /// Median trace+refine time over the timed repeats.
    pub median_ms: f64,
    pub specular_paths: usize,
    pub total_paths: usize,
}

/// Times tracing + refinement at each depth on prebuilt structures; path
/// counts are taken after dedup. A warm-up round over all depths is excluded
/// from the medians. Timed rounds visit every depth in turn, so slow phases of
/// a shared machine hit all depths alike instead of skewing one of them.
pub fn bench(scene: &Scene, config: &SimulationConfig, depths: &[usize], repeats: usize) -> Result<Vec<BenchRow>> {
    config.validate()?;
    let configs: Vec<SimulationConfig> = depths
        .iter()
        .map(|&depth| {
            let mut cfg = *config;
            cfg.trace.max_depth = depth;
            cfg.trace.validate().map(|_| cfg)
        })
        .collect::<Result<_>>()?;
    let prepared = Prepared::new(scene, config);
    let caster = prepared.caster(scene, config);
    let vis = build_visibility(&caster);

    let mut times = vec![Vec::with_capacity(repeats); depths.len()];
    let mut counts = vec![(0, 0); depths.len()];
    for round in 0..=repeats.max(1) {
        for (k, cfg) in configs.iter().enumerate() {
            let t = Instant::now();
            let (paths, _) = find_paths(&caster, &vis, cfg);
            let ms = ms_since(t);
            if round == 0 {
                let paths = dedup_paths(paths, scene);
                let specular = paths
                    .iter()
                    .filter(|p| p.interactions.iter().all(|i| i.kind == InteractionKind::Specular))
                    .count();
                counts[k] = (specular, paths.len());
            } else {
                times[k].push(ms);
            }
        }
    }
    Ok(depths
        .iter()
        .zip(times.iter_mut().zip(counts))
        .map(|(&depth, (t, (specular_paths, total_paths)))| BenchRow {
            depth,
            median_ms: median(t),
            specular_paths,
            total_paths,
        })
        .collect())
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("depth,median_ms,specular_paths,specular_scatter_paths\n");
    for r in rows {
        let _ = writeln!(s, "{},{:.3},{},{}", r.depth, r.median_ms, r.specular_paths, r.total_paths);
    }
    s
}

pub fn bench_table(rows: &[BenchRow]) -> String {
    let mut s = format!(
        "{:>5}  {:>12}  {:>10}  {:>18}\n",
        "depth", "median ms", "specular", "specular+scatter"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:>5}  {:>12.3}  {:>10}  {:>18}",
            r.depth, r.median_ms, r.specular_paths, r.total_paths
        );
    }
    s
}
