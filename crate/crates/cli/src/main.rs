//! `pcrt` command-line tool: scene checks, simulation, benchmarking, training and
//! synthetic scene generation.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use pcrt::em::{read_cir_csv, write_cfr_csv, write_cir_csv, MaterialParams};
use pcrt::geometry::{Ray, Vec3};
use pcrt::grid::{build_grid, grid_stats};
use pcrt::learn::{self_consistent_truth, train, GroundTruth, Problem};
use pcrt::pipeline::{bench, bench_csv, bench_table, compute_paths, path_dump, simulate, Prepared};
use pcrt::scene::{load_scene, save_scene, save_scene_binary, validate_scene, Scene, Severity};
use pcrt::synthgen::{generate, Shape, SynthSpec};

use config::{CommonArgs, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "pcrt", version, about = "Point-cloud ray tracing for radio propagation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a scene file against every invariant.
    ValidateScene(CommonArgs),
    /// Build the voxel grid and report its statistics.
    Voxelize {
        #[command(flatten)]
        common: CommonArgs,
        /// Print DPS statistics.
        #[arg(long)]
        stats: bool,
    },
    /// Cast one ray against the scene.
    Cast {
        #[command(flatten)]
        common: CommonArgs,
        /// Ray origin, `x,y,z`.
        #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
        from: Vec3,
        /// Ray direction, `x,y,z` (need not be normalized).
        #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
        dir: Vec3,
    },
    /// Compute paths and channel responses of every link.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Also write the receiver x DPS visibility bitset to this file.
        #[arg(long)]
        dump_vis: Option<PathBuf>,
    },
    /// Time tracing and refinement over reflection depths.
    Bench {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_delimiter = ',', default_value = "2,3,4,5")]
        depths: Vec<usize>,
        /// Timed runs per depth (one extra warm-up run is discarded).
        #[arg(long, default_value_t = 5)]
        repeats: usize,
    },
    /// Estimate material parameters from ground-truth impulse responses.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Directory holding `cir_tx{t}_rx{r}.csv` ground-truth files.
        #[arg(long)]
        truth_dir: Option<PathBuf>,
        /// Synthesize the ground truth from the scene's own material table.
        #[arg(long)]
        self_consistent: bool,
        /// Material table (scene `materials` schema) used instead of the scene's
        /// table when synthesizing self-consistent ground truth.
        #[arg(long)]
        true_materials: Option<PathBuf>,
    },
    /// Write a synthetic scene and its analytic ground truth.
    Synthgen {
        #[arg(long, value_enum)]
        shape: ShapeArg,
        /// Points per square meter.
        #[arg(long, default_value_t = 2500.0)]
        density: f64,
        /// Standard deviation of the normal displacement, m.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Side of the plane, m.
        #[arg(long, default_value_t = 4.0)]
        size: f64,
        /// Wall width of the corner, m.
        #[arg(long, default_value_t = 4.0)]
        width: f64,
        /// Wall height of the corner, m.
        #[arg(long, default_value_t = 2.5)]
        height: f64,
        /// Write the binary scene variant instead of JSON.
        #[arg(long)]
        binary: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ShapeArg {
    Plane,
    Corner,
    Corridor,
    Room,
}

fn parse_vec3(s: &str) -> std::result::Result<Vec3, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match parts[..] {
        [x, y, z] => Ok(Vec3::new(x, y, z)),
        _ => Err(format!("expected x,y,z, got {s:?}")),
    }
}

/// A scene path that does not exist.
#[derive(Debug)]
struct MissingScene(PathBuf);

impl std::fmt::Display for MissingScene {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "scene file not found: {}", self.0.display())
    }
}

impl std::error::Error for MissingScene {}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<MissingScene>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::ValidateScene(common) => cmd_validate(&common),
        Command::Voxelize { common, stats } => cmd_voxelize(&common, stats),
        Command::Cast { common, from, dir } => cmd_cast(&common, from, dir),
        Command::Simulate { common, dump_vis } => cmd_simulate(&common, dump_vis.as_deref()),
        Command::Bench {
            common,
            depths,
            repeats,
        } => cmd_bench(&common, &depths, repeats),
        Command::Train {
            common,
            truth_dir,
            self_consistent,
            true_materials,
        } => cmd_train(&common, truth_dir.as_deref(), self_consistent, true_materials.as_deref()),
        Command::Synthgen {
            shape,
            density,
            noise,
            seed,
            size,
            width,
            height,
            binary,
            out,
        } => {
            let shape = match shape {
                ShapeArg::Plane => Shape::Plane { size },
                ShapeArg::Corner => Shape::Corner { width, height },
                ShapeArg::Corridor => Shape::CorridorBox,
                ShapeArg::Room => Shape::Room5Mat,
            };
            cmd_synthgen(&SynthSpec::new(shape, density, noise, seed), binary, &out)
        }
    }
}

/// Resolves the configuration, sizes the worker pool and loads the scene.
fn setup(common: &CommonArgs) -> Result<(RunConfig, Scene)> {
    let config = common.resolve()?;
    if let Some(n) = config.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("thread pool")?;
    }
    let path = config
        .scene
        .clone()
        .ok_or_else(|| anyhow!("no scene given (use --scene or the config's \"scene\" key)"))?;
    if !path.exists() {
        return Err(MissingScene(path).into());
    }
    let scene = load_scene(&path).with_context(|| format!("scene: loading {}", path.display()))?;
    Ok((config, scene))
}

fn output_dir(config: &RunConfig) -> Result<PathBuf> {
    let dir = config
        .output
        .clone()
        .ok_or_else(|| anyhow!("no output directory given (use --out or the config's \"output\" key)"))?;
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn cmd_validate(common: &CommonArgs) -> Result<()> {
    let (_, scene) = setup(common)?;
    let diags = validate_scene(&scene);
    for d in &diags {
        println!("{d}");
    }
    let errors = diags.iter().filter(|d| d.severity == Severity::Error).count();
    println!(
        "{} points, {} edges, {} transmitters, {} receivers, {} materials: {} errors, {} warnings",
        scene.points.len(),
        scene.edges.len(),
        scene.transmitters.len(),
        scene.receivers.len(),
        scene.materials.len(),
        errors,
        diags.len() - errors
    );
    if errors > 0 {
        bail!("scene: {errors} validation errors");
    }
    Ok(())
}

fn cmd_voxelize(common: &CommonArgs, stats: bool) -> Result<()> {
    let (config, scene) = setup(common)?;
    let sets = build_grid(&scene, &config.grid, config.intersection.point_radius);
    let s = grid_stats(&sets);
    if stats {
        println!("dps_count      {}", s.dps_count);
        println!("points_per_dps min {} mean {:.2} max {}", s.min_points, s.mean_points, s.max_points);
        println!("memory_bytes   {}", s.memory_bytes);
    } else {
        println!("{} DPS", s.dps_count);
    }
    Ok(())
}

fn cmd_cast(common: &CommonArgs, from: Vec3, dir: Vec3) -> Result<()> {
    let (config, scene) = setup(common)?;
    if !(dir.norm() > 0.0) {
        bail!("cast: direction must be nonzero");
    }
    let sim = config.simulation();
    let prepared = Prepared::new(&scene, &sim);
    let caster = prepared.caster(&scene, &sim);
    match caster.cast_ray(&Ray::new(from, dir.normalize())) {
        Some(hit) => {
            let rec = serde_json::json!({
                "position": [hit.position.x, hit.position.y, hit.position.z],
                "normal": [hit.normal.x, hit.normal.y, hit.normal.z],
                "distance": hit.distance,
                "dps_index": hit.dps_index,
                "voxel": hit.voxel_coord,
                "surface_label": hit.surface_label,
                "material_label": scene.materials.label(hit.material_label),
            });
            println!("{rec}");
        }
        None => println!("miss"),
    }
    Ok(())
}

fn cmd_simulate(common: &CommonArgs, dump_vis: Option<&Path>) -> Result<()> {
    let (config, scene) = setup(common)?;
    let out = output_dir(&config)?;
    let sim = simulate(&scene, &config.simulation()).context("simulate")?;
    write(&out.join("paths.jsonl"), path_dump(&scene, &sim.paths, &sim.coefficients))?;
    for link in &sim.links {
        let stem = format!("tx{}_rx{}", link.tx_index, link.rx_index);
        let cir = out.join(format!("cir_{stem}.csv"));
        write_cir_csv(&cir, &link.response).with_context(|| format!("em: {}", cir.display()))?;
        let cfr = out.join(format!("cfr_{stem}.csv"));
        write_cfr_csv(&cfr, &link.response).with_context(|| format!("em: {}", cfr.display()))?;
    }
    let report = sim.timing.report(sim.links.len());
    write(&out.join("timing.txt"), &report)?;
    if let Some(p) = dump_vis {
        write(p, sim.visibility.to_bytes())?;
    }
    print!("{report}");
    println!("{} paths over {} links -> {}", sim.paths.len(), sim.links.len(), out.display());
    Ok(())
}

fn cmd_bench(common: &CommonArgs, depths: &[usize], repeats: usize) -> Result<()> {
    let (config, scene) = setup(common)?;
    let rows = bench(&scene, &config.simulation(), depths, repeats).context("bench")?;
    if config.output.is_some() {
        let out = output_dir(&config)?;
        write(&out.join("bench.csv"), bench_csv(&rows))?;
    }
    print!("{}", bench_table(&rows));
    Ok(())
}

fn load_truth(dir: &Path, scene: &Scene) -> Result<Vec<GroundTruth>> {
    let mut truth = Vec::new();
    for t in 0..scene.transmitters.len() {
        for r in 0..scene.receivers.len() {
            let path = dir.join(format!("cir_tx{t}_rx{r}.csv"));
            if !path.exists() {
                log::warn!("no ground truth for link tx {t} rx {r} ({})", path.display());
                continue;
            }
            let (_, cir) = read_cir_csv(&path).with_context(|| format!("learn: {}", path.display()))?;
            truth.push(GroundTruth {
                tx_index: t,
                rx_index: r,
                cir,
            });
        }
    }
    if truth.is_empty() {
        bail!("learn: no ground-truth files in {}", dir.display());
    }
    Ok(truth)
}

#[derive(serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct MaterialFile {
    materials: std::collections::BTreeMap<u32, MaterialParams>,
}

fn cmd_train(
    common: &CommonArgs,
    truth_dir: Option<&Path>,
    self_consistent: bool,
    true_materials: Option<&Path>,
) -> Result<()> {
    let (config, scene) = setup(common)?;
    let out = output_dir(&config)?;
    let sim = config.simulation();
    let (paths, _, timing) = compute_paths(&scene, &sim).context("simulate")?;
    log::info!("{} paths in {:.1} ms", paths.len(), timing.total_ms);

    let truth = if self_consistent {
        let reference = match true_materials {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                let file: MaterialFile =
                    serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
                let params = scene
                    .materials
                    .labels()
                    .iter()
                    .map(|l| {
                        file.materials
                            .get(l)
                            .copied()
                            .ok_or_else(|| anyhow!("{}: no entry for material {l}", p.display()))
                    })
                    .collect::<Result<Vec<_>>>()?;
                scene.with_material_params(params)
            }
            None => scene.clone(),
        };
        self_consistent_truth(&reference, &paths, &sim.em).context("learn")?
    } else {
        let dir = truth_dir.ok_or_else(|| anyhow!("learn: give --truth-dir or --self-consistent"))?;
        load_truth(dir, &scene)?
    };

    let problem = Problem::new(&scene, &paths, &truth, &sim.em).context("learn")?;
    let history = train(&problem, scene.materials.labels(), &config.train_config()).context("learn")?;
    history
        .write_csv(&out.join("training_log.csv"))
        .context("learn: writing training log")?;
    let table = scene.materials.with_params(history.final_params.clone());
    let file = MaterialFile {
        materials: table.to_map(),
    };
    write(
        &out.join("materials.json"),
        serde_json::to_string_pretty(&file).expect("material table serializes") + "\n",
    )?;
    for (label, p) in scene.materials.labels().iter().zip(&history.final_params) {
        println!(
            "material {label}: eps_r {:.4}  sigma {:.5} S/m  S {:.4}",
            p.relative_permittivity, p.conductivity, p.scattering_coefficient
        );
    }
    Ok(())
}

fn cmd_synthgen(spec: &SynthSpec, binary: bool, out: &Path) -> Result<()> {
    let synth = generate(spec).context("synthgen")?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let scene_path = if binary {
        let p = out.join("scene.bin");
        save_scene_binary(&synth.scene, &p).context("scene")?;
        p
    } else {
        let p = out.join("scene.json");
        save_scene(&synth.scene, &p).context("scene")?;
        p
    };
    write(
        &out.join("ground_truth.json"),
        serde_json::to_string_pretty(&synth.truth).expect("ground truth serializes") + "\n",
    )?;
    println!("{} points -> {}", synth.scene.points.len(), scene_path.display());
    Ok(())
}
