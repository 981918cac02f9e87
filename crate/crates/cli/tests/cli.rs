use std::collections::HashSet;
use std::path::Path;
use std::process::{Command, Output};

fn pcrt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcrt")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = pcrt(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn corner(dir: &Path) -> String {
    let out = dir.join("corner");
    ok(&["synthgen", "--shape", "corner", "--out", out.to_str().unwrap()]);
    out.join("scene.json").to_string_lossy().into_owned()
}

fn trajectories(dump: &Path) -> HashSet<(Vec<String>, Vec<u64>)> {
    std::fs::read_to_string(dump)
        .unwrap()
        .lines()
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            let kinds = v["kind_sequence"].as_array().unwrap().iter().map(|k| k.as_str().unwrap().to_string()).collect();
            let labels = v["labels"].as_array().unwrap().iter().map(|k| k.as_u64().unwrap()).collect();
            (kinds, labels)
        })
        .collect()
}

#[test]
fn missing_scene_exits_with_code_2() {
    let out = pcrt(&["simulate", "--scene", "/no/such/scene.json", "--out", "/tmp/unused"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/scene.json"));
}

#[test]
fn invalid_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let scene = corner(dir.path());
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"trace": {"max_depth": 2, "depth": 3}}"#).unwrap();
    let out = pcrt(&["validate-scene", "--scene", &scene, "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let out = pcrt(&["validate-scene", "--scene", &scene, "--max-depth", "0"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn corner_dump_holds_the_image_method_paths() {
    let dir = tempfile::tempdir().unwrap();
    let scene = corner(dir.path());
    let out = dir.path().join("sim");
    ok(&["simulate", "--scene", &scene, "--max-depth", "2", "--out", out.to_str().unwrap()]);
    let specular: HashSet<_> = trajectories(&out.join("paths.jsonl"))
        .into_iter()
        .filter(|(k, _)| k.iter().all(|k| k == "specular"))
        .map(|(_, l)| l)
        .collect();
    let truth: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("corner/ground_truth.json")).unwrap()).unwrap();
    let expected: HashSet<Vec<u64>> = truth["image_paths"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["surface_labels"].as_array().unwrap().iter().map(|l| l.as_u64().unwrap()).collect())
        .collect();
    assert_eq!(specular, expected);
    for f in ["cir_tx0_rx0.csv", "cfr_tx0_rx0.csv", "timing.txt"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let timing = std::fs::read_to_string(out.join("timing.txt")).unwrap();
    for stage in ["grid", "vis", "trace+refine", "dedup", "em"] {
        assert!(timing.contains(stage));
    }
}

#[test]
fn deeper_simulation_is_a_superset() {
    let dir = tempfile::tempdir().unwrap();
    let scene = corner(dir.path());
    let d2 = dir.path().join("d2");
    let d5 = dir.path().join("d5");
    ok(&["simulate", "--scene", &scene, "--max-depth", "2", "--out", d2.to_str().unwrap()]);
    ok(&["simulate", "--scene", &scene, "--max-depth", "5", "--out", d5.to_str().unwrap()]);
    let shallow = trajectories(&d2.join("paths.jsonl"));
    let deep = trajectories(&d5.join("paths.jsonl"));
    // scatter trajectories carry voxel keys that the dump does not show, so
    // compare on (kinds, labels)
    assert!(shallow.is_subset(&deep));
}

#[test]
fn zero_iterations_write_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let scene = corner(dir.path());
    let out = dir.path().join("train");
    ok(&[
        "train", "--scene", &scene, "--max-depth", "1", "--self-consistent", "--iterations", "0", "--out",
        out.to_str().unwrap(),
    ]);
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("materials.json")).unwrap()).unwrap();
    for (_, p) in m["materials"].as_object().unwrap() {
        assert!((p["relative_permittivity"].as_f64().unwrap() - 3.0).abs() < 1e-12);
        assert!((p["conductivity_S_per_m"].as_f64().unwrap() - 0.01).abs() < 1e-12);
        assert!((p["scattering_coefficient"].as_f64().unwrap() - 0.3).abs() < 1e-12);
    }
    assert_eq!(std::fs::read_to_string(out.join("training_log.csv")).unwrap().lines().count(), 1);
}

#[test]
fn train_reads_simulated_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let scene = corner(dir.path());
    let sim = dir.path().join("sim");
    ok(&["simulate", "--scene", &scene, "--max-depth", "1", "--out", sim.to_str().unwrap()]);
    let out = dir.path().join("train");
    ok(&[
        "train", "--scene", &scene, "--max-depth", "1", "--truth-dir", sim.to_str().unwrap(), "--iterations", "20",
        "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(std::fs::read_to_string(out.join("training_log.csv")).unwrap().lines().count(), 21);
    let missing = pcrt(&["train", "--scene", &scene, "--truth-dir", "/no/truth", "--out", out.to_str().unwrap()]);
    assert!(!missing.status.success());
}

#[test]
fn small_commands() {
    let dir = tempfile::tempdir().unwrap();
    let scene = corner(dir.path());
    let v = ok(&["voxelize", "--scene", &scene, "--stats"]);
    assert!(String::from_utf8_lossy(&v.stdout).contains("dps_count"));
    let c = ok(&["cast", "--scene", &scene, "--from", "1,1,1", "--dir", "-1,0,0"]);
    let hit: serde_json::Value = serde_json::from_slice(&c.stdout).unwrap();
    assert!((hit["distance"].as_f64().unwrap() - 1.0).abs() < 0.015);
    let c = ok(&["cast", "--scene", &scene, "--from", "1,1,1", "--dir", "1,1,0"]);
    assert_eq!(String::from_utf8_lossy(&c.stdout).trim(), "miss");
    ok(&["validate-scene", "--scene", &scene, "--threads", "1"]);
    let bench = dir.path().join("bench");
    let b = ok(&["bench", "--scene", &scene, "--depths", "1,2", "--repeats", "1", "--out", bench.to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&b.stdout).contains("median ms"));
    let csv = std::fs::read_to_string(bench.join("bench.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    let vis = dir.path().join("vis.bin");
    let sim = dir.path().join("sim");
    ok(&["simulate", "--scene", &scene, "--max-depth", "1", "--out", sim.to_str().unwrap(), "--dump-vis", vis.to_str().unwrap()]);
    assert_eq!(std::fs::metadata(&vis).unwrap().len() % 8, 0);
}
