//! Complex path coefficients.
//!
//! Free-space paths (line of sight and specular chains) carry a vertically
//! polarized field from the transmitter. At each reflection the field splits
//! into TE/TM components about the local plane of incidence, each scaled by
//! its Fresnel coefficient and by `sqrt(1 - S^2)`, the share of the energy left
//! after diffuse scattering. The receiver projects the arriving field on its
//! own vertical polarization.
//!
//! A path ending in a diffuse scatter uses a Lambertian patch of area `dA`:
//!
//! ```text
//! a = lambda / (4 pi d1 d2) * sqrt(dA cos(theta_i)) * S * |Gamma E_in| * sqrt(cos(theta_s) / pi)
//!     * exp(-j k (d1 + d2))
//! ```
//!
//! where `d1` is the unfolded length up to the patch, `d2` the distance to the
//! receiver and `|Gamma E_in|` the magnitude of the incident field after
//! reflection at the patch. The scattered field is depolarized and received
//! with unit gain. Diffraction paths are geometric only and contribute zero.

use num_complex::Complex64;
use smallvec::SmallVec;

use super::{fresnel_pair, param_id, permittivity_at, seed, CDual, Dual, EmConfig, MaterialParams, ParamId};
use crate::error::{Error, Result};
use crate::geometry::{tangent_basis, Vec3};
use crate::path::{InteractionKind, PropagationPath};
use crate::scene::Scene;

#[derive(Debug, Clone, PartialEq)]
pub struct PathCoefficient {
    pub value: Complex64,
    /// Partials with respect to the material parameters the path depends on.
    pub grad: SmallVec<[(ParamId, Complex64); 6]>,
}

#[derive(Debug, Clone)]
struct Bounce {
    /// Index into `PathGeometry::materials`.
    slot: usize,
    cos_i: f64,
    s: Vec3,
    p_in: Vec3,
    p_out: Vec3,
}

#[derive(Debug, Clone)]
struct ScatterPatch {
    slot: usize,
    cos_i: f64,
    s: Vec3,
    p_in: Vec3,
    /// `lambda / (4 pi d1 d2) * sqrt(dA cos_i) * sqrt(cos_s / pi)`.
    gain: f64,
}

/// Geometry-only part of a path coefficient, reusable across material updates.
#[derive(Debug, Clone)]
pub struct PathGeometry {
    pub length: f64,
    /// Distinct materials in order of first use.
    pub materials: SmallVec<[u32; 4]>,
    bounces: Vec<Bounce>,
    scatter: Option<ScatterPatch>,
    tx_pol: Vec3,
    rx_pol: Vec3,
    diffraction: bool,
}

fn vertical_polarization(d: &Vec3) -> Vec3 {
    let z = Vec3::z();
    let v = z - d * z.dot(d);
    match v.try_normalize(1e-6) {
        Some(v) => v,
        None => {
            let x = Vec3::x();
            (x - d * x.dot(d)).normalize()
        }
    }
}

/// TE direction and incoming/outgoing TM directions about the plane of incidence.
fn incidence_frame(d_in: &Vec3, d_out: &Vec3, n: &Vec3) -> (Vec3, Vec3, Vec3) {
    let s = d_in
        .cross(n)
        .try_normalize(1e-9)
        .unwrap_or_else(|| tangent_basis(n).0);
    (s, s.cross(d_in), s.cross(d_out))
}

impl PathGeometry {
    pub fn new(path: &PropagationPath, tx: &Vec3, rx: &Vec3, config: &EmConfig) -> Self {
        let verts = path.vertices(tx, rx);
        let seg: Vec<Vec3> = verts.windows(2).map(|w| w[1] - w[0]).collect();
        let lens: Vec<f64> = seg.iter().map(|s| s.norm()).collect();
        let dirs: Vec<Vec3> = seg.iter().zip(&lens).map(|(s, l)| s / *l).collect();
        let length: f64 = lens.iter().sum();

        let mut materials: SmallVec<[u32; 4]> = SmallVec::new();
        let mut slot_of = |m: u32| match materials.iter().position(|&x| x == m) {
            Some(i) => i,
            None => {
                materials.push(m);
                materials.len() - 1
            }
        };

        let mut bounces = Vec::new();
        let mut scatter = None;
        let mut diffraction = false;
        for (k, it) in path.interactions.iter().enumerate() {
            let (d_in, d_out) = (dirs[k], dirs[k + 1]);
            let cos_i = it.normal.dot(&d_in).abs().min(1.0);
            match it.kind {
                InteractionKind::Specular => {
                    let (s, p_in, p_out) = incidence_frame(&d_in, &d_out, &it.normal);
                    bounces.push(Bounce {
                        slot: slot_of(it.material_label),
                        cos_i,
                        s,
                        p_in,
                        p_out,
                    });
                }
                InteractionKind::Scatter => {
                    let (s, p_in, _) = incidence_frame(&d_in, &d_out, &it.normal);
                    let d1: f64 = lens[..=k].iter().sum();
                    let d2 = lens[k + 1];
                    let cos_s = it.normal.dot(&d_out).abs().min(1.0);
                    let gain = config.wavelength() / (4.0 * std::f64::consts::PI * d1 * d2)
                        * (config.scatter_area * cos_i).sqrt()
                        * (cos_s / std::f64::consts::PI).sqrt();
                    scatter = Some(ScatterPatch {
                        slot: slot_of(it.material_label),
                        cos_i,
                        s,
                        p_in,
                        gain,
                    });
                }
                InteractionKind::Diffraction => diffraction = true,
            }
        }

        PathGeometry {
            length,
            materials,
            bounces,
            scatter,
            tx_pol: vertical_polarization(&dirs[0]),
            rx_pol: vertical_polarization(dirs.last().unwrap()),
            diffraction,
        }
    }

    pub fn delay(&self) -> f64 {
        self.length / super::SPEED_OF_LIGHT
    }

    pub fn contributes(&self) -> bool {
        !self.diffraction
    }

    /// Coefficient with partials for local material `j` in slots `3j..3j+3`.
    /// With `N == 0` only the value is computed.
    pub fn evaluate<const N: usize>(&self, params: &[MaterialParams], config: &EmConfig) -> CDual<N> {
        if self.diffraction {
            return CDual::zero();
        }
        let f = config.center_frequency;
        let mat = |slot: usize| &params[self.materials[slot] as usize];
        let scattering = |slot: usize| seed::<N>(mat(slot).scattering_coefficient, 3 * slot + 2);

        let mut field = [
            CDual::<N>::constant(self.tx_pol.x.into()),
            CDual::constant(self.tx_pol.y.into()),
            CDual::constant(self.tx_pol.z.into()),
        ];
        let dot = |e: &[CDual<N>; 3], v: &Vec3| e[0] * v.x + e[1] * v.y + e[2] * v.z;

        for b in &self.bounces {
            let eta = permittivity_at::<N>(mat(b.slot), f, 3 * b.slot);
            let (te, tm) = fresnel_pair(eta, b.cos_i);
            let s = scattering(b.slot);
            let remain = Dual::constant(1.0) - s * s;
            let keep = if remain.value > 0.0 {
                remain.sqrt()
            } else {
                Dual::constant(0.0)
            };
            let es = (te * dot(&field, &b.s)).mul_real(keep);
            let ep = (tm * dot(&field, &b.p_in)).mul_real(keep);
            for i in 0..3 {
                field[i] = es * b.s[i] + ep * b.p_out[i];
            }
        }

        let k = 2.0 * std::f64::consts::PI / config.wavelength();
        let phase = Complex64::from_polar(1.0, -k * self.length);
        match &self.scatter {
            None => {
                let spread = config.wavelength() / (4.0 * std::f64::consts::PI * self.length);
                dot(&field, &self.rx_pol).scale(phase * spread)
            }
            Some(p) => {
                let eta = permittivity_at::<N>(mat(p.slot), f, 3 * p.slot);
                let (te, tm) = fresnel_pair(eta, p.cos_i);
                let power = (te * dot(&field, &p.s)).norm_sqr() + (tm * dot(&field, &p.p_in)).norm_sqr();
                if power.value <= 0.0 {
                    return CDual::zero();
                }
                let amplitude = power.sqrt() * scattering(p.slot) * p.gain;
                CDual::from_real(amplitude).scale(phase)
            }
        }
    }

    /// Value and sparse partials keyed by global parameter id.
    pub fn coefficient(&self, params: &[MaterialParams], config: &EmConfig) -> PathCoefficient {
        match self.materials.len() {
            0 => self.collect::<0>(params, config),
            1 => self.collect::<3>(params, config),
            2 => self.collect::<6>(params, config),
            3..=4 => self.collect::<12>(params, config),
            5..=8 => self.collect::<24>(params, config),
            _ => self.collect::<48>(params, config),
        }
    }

    fn collect<const N: usize>(&self, params: &[MaterialParams], config: &EmConfig) -> PathCoefficient {
        let a = self.evaluate::<N>(params, config);
        let grad = (0..N.min(3 * self.materials.len()))
            .map(|i| (param_id(self.materials[i / 3], i % 3), a.grad[i]))
            .collect();
        PathCoefficient {
            value: a.value,
            grad,
        }
    }

    /// Value only.
    pub fn value(&self, params: &[MaterialParams], config: &EmConfig) -> Complex64 {
        self.evaluate::<0>(params, config).value
    }
}

/// Coefficient of a refined path using the scene's material table.
pub fn path_coefficient(path: &PropagationPath, scene: &Scene, config: &EmConfig) -> Result<PathCoefficient> {
    let n_mat = scene.materials.len() as u32;
    if let Some(bad) = path.interactions.iter().find(|i| i.material_label >= n_mat) {
        return Err(Error::UnknownMaterial(bad.material_label));
    }
    let tx = scene
        .transmitters
        .get(path.tx_index)
        .ok_or(Error::IndexOutOfRange {
            index: path.tx_index,
            len: scene.transmitters.len(),
        })?;
    let rx = scene.receivers.get(path.rx_index).ok_or(Error::IndexOutOfRange {
        index: path.rx_index,
        len: scene.receivers.len(),
    })?;
    let geom = PathGeometry::new(path, tx, rx, config);
    Ok(geom.coefficient(scene.materials.params(), config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path::Interaction;

    fn specular(point: Vec3, normal: Vec3, material: u32) -> Interaction {
        Interaction {
            kind: InteractionKind::Specular,
            point,
            normal,
            surface_label: 0,
            material_label: material,
            voxel_coord: [0, 0, 0],
            edge_index: None,
        }
    }

    #[test]
    fn los_free_space() {
        let cfg = EmConfig::default();
        let path = PropagationPath::los(0, 0);
        let g = PathGeometry::new(&path, &Vec3::zeros(), &Vec3::new(1.0, 0.0, 0.0), &cfg);
        let a = g.value(&[], &cfg);
        let lambda = 299_792_458.0 / 8e9;
        assert!((a.norm() - lambda / (4.0 * std::f64::consts::PI)).abs() < 1e-15);
        assert!((a.norm() - 2.9822e-3).abs() < 5e-7);
        let expected = (-2.0 * std::f64::consts::PI / lambda).rem_euclid(2.0 * std::f64::consts::PI);
        assert!((a.arg().rem_euclid(2.0 * std::f64::consts::PI) - expected).abs() < 1e-9);
    }

    #[test]
    fn normal_incidence_wall() {
        let cfg = EmConfig::default();
        let mut path = PropagationPath::los(0, 0);
        // Vertical wall x = 0, tx and rx on the x axis (rx slightly off to avoid coincidence).
        path.interactions.push(specular(Vec3::zeros(), Vec3::x(), 0));
        let tx = Vec3::new(1.0, 0.0, 0.0);
        let rx = Vec3::new(2.0, 0.0, 0.0);
        let g = PathGeometry::new(&path, &tx, &rx, &cfg);
        let a = g.value(&[MaterialParams::new(4.0, 0.0, 0.0)], &cfg);
        let lambda = cfg.wavelength();
        let expected = lambda / (4.0 * std::f64::consts::PI * 3.0) / 3.0;
        assert!((a.norm() - expected).abs() < 1e-15);
    }

    #[test]
    fn diffraction_contributes_nothing() {
        let cfg = EmConfig::default();
        let mut path = PropagationPath::los(0, 0);
        let mut it = specular(Vec3::new(0.0, 0.0, 1.0), Vec3::x(), 0);
        it.kind = InteractionKind::Diffraction;
        it.edge_index = Some(0);
        path.interactions.push(it);
        let g = PathGeometry::new(&path, &Vec3::zeros(), &Vec3::new(1.0, 0.0, 0.0), &cfg);
        assert_eq!(g.value(&[MaterialParams::default()], &cfg), Complex64::new(0.0, 0.0));
        assert!(!g.contributes());
    }
}
