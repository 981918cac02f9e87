mod common;

use pcrt::geometry::{angle_deg, reflect, Vec3};
use pcrt::pipeline::{compute_paths, Prepared};
use pcrt::refine::{
    length_gradient, length_on_planes, minimize_on_edge, minimize_on_planes, path_length, refine_specular, Plane,
    RefinementConfig,
};
use pcrt::synthgen::image_paths;
use proptest::prelude::*;

use common::{corner, synth, with_depth};

fn vec3() -> impl Strategy<Value = Vec3> {
    (-3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn direction() -> impl Strategy<Value = Vec3> {
    vec3().prop_filter("nonzero", |v| v.norm() > 0.1).prop_map(|v| v.normalize())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn gradient_matches_central_differences(
        tx in vec3(), rx in vec3(),
        planes in prop::collection::vec((vec3(), direction()), 1..5),
        coords in prop::collection::vec(-1.0f64..1.0, 8),
    ) {
        let planes: Vec<Plane> = planes.into_iter().map(|(o, n)| Plane::new(o, n)).collect();
        let x = &coords[..2 * planes.len()];
        let Some(g) = length_gradient(&tx, &rx, &planes, x) else { return Ok(()) };
        let h = 1e-6;
        let (mut e2, mut r2) = (0.0, 0.0);
        for i in 0..x.len() {
            let mut p = x.to_vec();
            let mut m = x.to_vec();
            p[i] += h;
            m[i] -= h;
            let fd = (length_on_planes(&tx, &rx, &planes, &p) - length_on_planes(&tx, &rx, &planes, &m)) / (2.0 * h);
            e2 += (g[i] - fd).powi(2);
            r2 += fd * fd;
        }
        prop_assert!((e2 / r2).sqrt() < 1e-5);
    }

    #[test]
    fn single_plane_minimum_is_the_mirror_point(
        tx in vec3(), rx in vec3(), origin in vec3(), n in direction(),
        dt in 0.2f64..3.0, dr in 0.2f64..3.0,
    ) {
        let plane = Plane::new(origin, n);
        // both antennas in front of the plane at the drawn heights
        let tx = tx + n * (dt - n.dot(&(tx - origin)));
        let rx = rx + n * (dr - n.dot(&(rx - origin)));
        let m = minimize_on_planes(&tx, &rx, &[plane], &RefinementConfig::default()).unwrap();
        prop_assert!(m.converged);
        let image = tx - n * (2.0 * dt);
        prop_assert!((m.length - (rx - image).norm()).abs() < 1e-8);
        // law of reflection at the minimum
        let d_in = (m.points[0] - tx).normalize();
        let d_out = (rx - m.points[0]).normalize();
        prop_assert!(angle_deg(&reflect(&d_in, &n), &d_out) < 0.5);
    }

    #[test]
    fn minimization_never_increases_length(
        tx in vec3(), rx in vec3(), planes in prop::collection::vec((vec3(), direction()), 1..4),
    ) {
        let planes: Vec<Plane> = planes.into_iter().map(|(o, n)| Plane::new(o, n)).collect();
        let start = length_on_planes(&tx, &rx, &planes, &vec![0.0; 2 * planes.len()]);
        if let Some(m) = minimize_on_planes(&tx, &rx, &planes, &RefinementConfig::default()) {
            prop_assert!(m.length <= start + 1e-12);
            let mut verts = vec![tx];
            verts.extend(&m.points);
            verts.push(rx);
            prop_assert!((path_length(&verts) - m.length).abs() < 1e-9);
            prop_assert!(m.iterations <= 50);
        }
    }

    #[test]
    fn edge_point_satisfies_equal_angles(
        tx in vec3(), rx in vec3(), a in vec3(), dir in direction(),
    ) {
        let b = a + dir * 6.0;
        let (p, t, _) = minimize_on_edge(&tx, &rx, &a, &b, &RefinementConfig::default()).unwrap();
        prop_assert!((0.0..=6.0 + 1e-12).contains(&t));
        prop_assert!((p - (a + dir * t)).norm() < 1e-9);
        if t > 1e-6 && t < 6.0 - 1e-6 {
            // Keller cone: equal angles with the edge on both sides
            let ci = (p - tx).normalize().dot(&dir);
            let co = (rx - p).normalize().dot(&dir);
            prop_assert!((ci - co).abs() < 1e-3, "{} vs {}", ci, co);
        }
    }
}

#[test]
fn two_walls_match_image_method() {
    let s = synth(corner(), 0.0, 1);
    let tx = s.scene.transmitters[0];
    let rx = s.scene.receivers[0];
    let expected = image_paths(&s.truth.surfaces, &tx, &rx, 2);
    let double = expected.iter().find(|p| p.surface_labels.len() == 2).unwrap();
    let planes: Vec<Plane> = double
        .surface_labels
        .iter()
        .map(|l| {
            let r = s.truth.surfaces.iter().find(|r| r.surface_label == *l).unwrap();
            // start away from the answer
            Plane::new(r.center(), r.normal)
        })
        .collect();
    let m = minimize_on_planes(&tx, &rx, &planes, &RefinementConfig::default()).unwrap();
    assert!(m.converged);
    for (p, q) in m.points.iter().zip(&double.points) {
        assert!((p - q).norm() < 5e-3, "{p} vs {q}");
    }
    assert!((m.length - double.length).abs() < 1e-6);
}

#[test]
fn refined_paths_obey_reflection_law_and_stay_on_surfaces() {
    let s = synth(corner(), 0.002, 5);
    let (paths, stats, _) = compute_paths(&s.scene, &with_depth(3)).unwrap();
    assert!(stats.refine.accepted > 0);
    let tx = s.scene.transmitters[0];
    let rx = s.scene.receivers[0];
    for p in paths.iter().filter(|p| !p.is_los() && p.interactions.iter().all(|i| i.kind == pcrt::path::InteractionKind::Specular)) {
        assert!(p.refined);
        let verts = p.vertices(&tx, &rx);
        for (k, it) in p.interactions.iter().enumerate() {
            let d_in = (verts[k + 1] - verts[k]).normalize();
            let d_out = (verts[k + 2] - verts[k + 1]).normalize();
            assert!(angle_deg(&reflect(&d_in, &it.normal), &d_out) < 0.5);
            let rect = s.truth.surfaces.iter().find(|r| r.surface_label == it.surface_label).unwrap();
            assert!(rect.signed_distance(&it.point).abs() < 0.01);
        }
    }
}

#[test]
fn blocked_candidate_is_rejected() {
    // the corridor's straight line is blocked by the baffle, so no LOS survives
    let s = synth(pcrt::synthgen::Shape::CorridorBox, 0.0, 1);
    let cfg = with_depth(1);
    let prep = Prepared::new(&s.scene, &cfg);
    let caster = prep.caster(&s.scene, &cfg);
    let los = pcrt::path::PropagationPath::los(0, 0);
    assert!(refine_specular(&los, &caster, &cfg.refine).is_none());
}
