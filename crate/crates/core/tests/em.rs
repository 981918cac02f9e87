mod common;

use num_complex::Complex64;
use pcrt::em::{
    cir_loss, cir_loss_grad, complex_permittivity, fresnel_reflection, path_coefficient, synthesize_cir, EmConfig,
    LinkModel, MaterialParams, PathGeometry, Polarization, SPEED_OF_LIGHT,
};
use pcrt::pipeline::{compute_paths, simulate};
use proptest::prelude::*;

use common::{corner, plane, synth, with_depth};

fn material() -> impl Strategy<Value = MaterialParams> {
    (1.2f64..9.0, 0.001f64..0.8, 0.02f64..0.95).prop_map(|(e, s, sc)| MaterialParams::new(e, s, sc))
}

fn step(x: f64) -> f64 {
    1e-6 * x.abs().max(0.1)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn fresnel_derivatives(m in material(), cos in 0.02f64..1.0, te in any::<bool>()) {
        let pol = if te { Polarization::Te } else { Polarization::Tm };
        let f = 8e9;
        let r = fresnel_reflection(complex_permittivity(&m, f), cos, pol);
        prop_assert!(r.value.norm() <= 1.0 + 1e-12);
        for c in 0..2 {
            let h = step(m.component(c));
            let mut p = m;
            *p.component_mut(c) += h;
            let up = fresnel_reflection(complex_permittivity(&p, f), cos, pol).value;
            *p.component_mut(c) -= 2.0 * h;
            let down = fresnel_reflection(complex_permittivity(&p, f), cos, pol).value;
            let fd = (up - down) / (2.0 * h);
            prop_assert!((r.grad[c] - fd).norm() <= 1e-4 * fd.norm().max(1e-8));
        }
        prop_assert_eq!(r.grad[2], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn loss_gradient_is_conjugate_scaled_difference(
        h in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 16),
        t in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 16),
        k in 0usize..16,
    ) {
        let h: Vec<Complex64> = h.into_iter().map(|(a, b)| Complex64::new(a, b)).collect();
        let t: Vec<Complex64> = t.into_iter().map(|(a, b)| Complex64::new(a, b)).collect();
        let (loss, g) = cir_loss_grad(&h, &t).unwrap();
        prop_assert!((loss - cir_loss(&h, &t).unwrap()).abs() < 1e-15);
        // dL = Re(conj(g) dh) for real and imaginary perturbations
        for dir in [Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)] {
            let eps = 1e-6;
            let mut hp = h.clone();
            let mut hm = h.clone();
            hp[k] += dir * eps;
            hm[k] -= dir * eps;
            let fd = (cir_loss(&hp, &t).unwrap() - cir_loss(&hm, &t).unwrap()) / (2.0 * eps);
            prop_assert!((fd - (g[k].conj() * dir).re).abs() < 1e-7);
        }
    }
}

#[test]
fn free_space_and_single_bounce_magnitudes() {
    let s = synth(plane(), 0.0, 1);
    let em = EmConfig::default();
    let (paths, _, _) = compute_paths(&s.scene, &with_depth(1)).unwrap();
    let tx = s.scene.transmitters[0];
    let rx = s.scene.receivers[0];
    let los = paths.iter().find(|p| p.is_los()).unwrap();
    let a = path_coefficient(los, &s.scene, &em).unwrap();
    let d = (rx - tx).norm();
    assert!((a.value.norm() - em.wavelength() / (4.0 * std::f64::consts::PI * d)).abs() < 1e-12);
    assert!(a.grad.iter().all(|(_, g)| g.norm() == 0.0));

    // floor bounce: |a| = lambda / (4 pi L) * |Gamma_TM| * sqrt(1 - S^2) for
    // vertical antennas in the plane of incidence
    let bounce = paths
        .iter()
        .find(|p| p.depth() == 1 && p.interactions[0].kind == pcrt::path::InteractionKind::Specular)
        .unwrap();
    let g = PathGeometry::new(bounce, &tx, &rx, &em);
    let m = s.scene.materials.params()[0];
    let it = &bounce.interactions[0];
    let cos = it.normal.dot(&(tx - it.point).normalize()).abs();
    let gamma = fresnel_reflection(complex_permittivity(&m, em.center_frequency), cos, Polarization::Tm).value;
    let expected = em.wavelength() / (4.0 * std::f64::consts::PI * g.length)
        * gamma.norm()
        * (1.0 - m.scattering_coefficient.powi(2)).sqrt();
    let got = g.value(s.scene.materials.params(), &em).norm();
    assert!((got - expected).abs() < 1e-9 * expected.max(1e-12) + 1e-12, "{got} vs {expected}");
}

#[test]
fn cir_peak_lands_at_the_path_delay() {
    let s = synth(corner(), 0.0, 1);
    let em = EmConfig::default();
    let (paths, _, _) = compute_paths(&s.scene, &with_depth(1)).unwrap();
    let los: Vec<_> = paths.iter().filter(|p| p.is_los()).cloned().collect();
    let cir = synthesize_cir(&los, &s.scene, &em).unwrap();
    let d = (s.scene.receivers[0] - s.scene.transmitters[0]).norm() / SPEED_OF_LIGHT;
    let pdp = cir.pdp();
    let peak = (0..pdp.len()).max_by(|&a, &b| pdp[a].total_cmp(&pdp[b])).unwrap();
    assert!((peak as f64 * cir.tap_spacing - d).abs() <= cir.tap_spacing);
    // Parseval: CIR energy equals mean CFR power
    let cfr_power: f64 = cir.cfr.iter().map(|c| c.norm_sqr()).sum::<f64>() / cir.cfr.len() as f64;
    assert!((cir.energy() - cfr_power).abs() < 1e-12 * cfr_power.max(1e-30));
}

#[test]
fn link_model_matches_simulation_and_its_jacobian() {
    let s = synth(corner(), 0.0, 1);
    let cfg = with_depth(2);
    let sim = simulate(&s.scene, &cfg).unwrap();
    let link = LinkModel::new(&s.scene, &sim.paths, 0, 0, &cfg.em).unwrap();
    let params = s.scene.materials.params();
    let cir = link.cir(params);
    let reference = &sim.links[0].response.cir;
    let scale = reference.iter().map(|c| c.norm()).fold(0.0, f64::max);
    for (a, b) in cir.iter().zip(reference) {
        assert!((a - b).norm() < 1e-12 * scale);
    }
    let n = 3 * params.len();
    let (_, jac) = link.cir_jacobian(params, n);
    for id in 0..n {
        let (m, c) = (id / 3, id % 3);
        let h = step(params[m].component(c));
        let mut p = params.to_vec();
        *p[m].component_mut(c) += h;
        let up = link.cir(&p);
        *p[m].component_mut(c) -= 2.0 * h;
        let down = link.cir(&p);
        let (mut e2, mut r2) = (0.0, 0.0);
        for k in 0..cir.len() {
            let fd = (up[k] - down[k]) / (2.0 * h);
            e2 += (jac[id][k] - fd).norm_sqr();
            r2 += fd.norm_sqr();
        }
        assert!((e2 / r2).sqrt() < 1e-5, "param {id}: {}", (e2 / r2).sqrt());
    }
}
