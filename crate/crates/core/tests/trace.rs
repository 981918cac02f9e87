mod common;

use std::collections::HashSet;

use pcrt::dedup::trajectory_tuple;
use pcrt::path::InteractionKind;
use pcrt::pipeline::{compute_paths, Prepared};
use pcrt::synthgen::Shape;
use pcrt::trace::{trace_bounces, trace_diffraction, trace_los, TraceConfig};
use pcrt::vis::build_visibility;

use common::{corner, synth, with_depth};

#[test]
fn line_of_sight_follows_occlusion() {
    let s = synth(corner(), 0.0, 1);
    let cfg = with_depth(1);
    let prep = Prepared::new(&s.scene, &cfg);
    assert_eq!(trace_los(&prep.caster(&s.scene, &cfg), 0).len(), 1);

    let s = synth(Shape::CorridorBox, 0.0, 1);
    let prep = Prepared::new(&s.scene, &cfg);
    assert!(trace_los(&prep.caster(&s.scene, &cfg), 0).is_empty());
}

#[test]
fn one_ray_per_dps_and_depth_bounded_chains() {
    let s = synth(corner(), 0.0, 1);
    let cfg = with_depth(3);
    let prep = Prepared::new(&s.scene, &cfg);
    let caster = prep.caster(&s.scene, &cfg);
    let vis = build_visibility(&caster);
    let out = trace_bounces(&caster, &vis, 0, &cfg.trace);
    assert_eq!(out.launched, prep.sets.len());
    assert!(out.active.windows(2).all(|w| w[1] <= w[0]));
    for p in out.specular.iter().chain(&out.scatter) {
        assert!((1..=3).contains(&p.depth()));
        assert!(p.is_well_formed());
    }
    // scatter paths end in a lit, visible patch
    let rx = s.scene.receivers[0];
    for p in &out.scatter {
        let last = p.interactions.last().unwrap();
        assert_eq!(last.kind, InteractionKind::Scatter);
        assert!(last.normal.dot(&(rx - last.point)) > 0.0);
        assert!(caster.test_visibility(&rx, &last.point));
    }
}

#[test]
fn scattering_switch() {
    let s = synth(corner(), 0.0, 1);
    let cfg = with_depth(2);
    let prep = Prepared::new(&s.scene, &cfg);
    let caster = prep.caster(&s.scene, &cfg);
    let vis = build_visibility(&caster);
    let off = TraceConfig {
        enable_scattering: false,
        ..cfg.trace
    };
    assert!(trace_bounces(&caster, &vis, 0, &off).scatter.is_empty());
    assert!(!trace_bounces(&caster, &vis, 0, &cfg.trace).scatter.is_empty());
}

#[test]
fn deeper_trace_keeps_shallow_trajectories() {
    let s = synth(Shape::Room5Mat, 0.0, 3);
    let shallow: HashSet<_> = compute_paths(&s.scene, &with_depth(2)).unwrap().0.iter().map(trajectory_tuple).collect();
    let deep: HashSet<_> = compute_paths(&s.scene, &with_depth(3)).unwrap().0.iter().map(trajectory_tuple).collect();
    let missing = shallow.difference(&deep).count();
    assert_eq!(missing, 0, "{missing} of {} trajectories lost", shallow.len());
    assert!(deep.len() > shallow.len());
}

#[test]
fn tracing_is_deterministic() {
    let s = synth(corner(), 0.002, 9);
    let a = compute_paths(&s.scene, &with_depth(3)).unwrap().0;
    let b = compute_paths(&s.scene, &with_depth(3)).unwrap().0;
    assert_eq!(a, b);
}

#[test]
fn diffraction_candidates_sit_on_edges() {
    let s = synth(corner(), 0.0, 1);
    let mut cfg = with_depth(2);
    cfg.trace.enable_diffraction = true;
    let prep = Prepared::new(&s.scene, &cfg);
    let cands = trace_diffraction(&prep.caster(&s.scene, &cfg), 0);
    assert_eq!(cands.len(), 1);
    let (paths, stats, _) = compute_paths(&s.scene, &cfg).unwrap();
    assert_eq!(stats.diffraction_candidates, 1);
    let diffracted: Vec<_> = paths.iter().filter(|p| p.has_diffraction()).collect();
    assert!(!diffracted.is_empty());
    for p in diffracted {
        let it = &p.interactions[0];
        let edge = &s.scene.edges[it.edge_index.unwrap()];
        let axis = (edge.end - edge.start).normalize();
        let off = (it.point - edge.start) - axis * axis.dot(&(it.point - edge.start));
        assert!(off.norm() < 1e-9);
    }
}
