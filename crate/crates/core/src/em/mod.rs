//! Differentiable electromagnetic evaluation of propagation paths.
//!
//! Material parameters are the differentiation leaves. Each material owns three
//! parameter ids: `3 * material + {0: relative permittivity, 1: conductivity,
//! 2: scattering coefficient}`.

mod cir;
mod coefficient;
mod dual;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cir::{
    cir_loss, cir_loss_grad, read_cir_csv, synthesize_cir, write_cfr_csv, write_cir_csv,
    ChannelImpulseResponse, LinkModel, Tap,
};
pub use coefficient::{path_coefficient, PathCoefficient, PathGeometry};
pub use dual::{CDual, Dual};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const VACUUM_PERMITTIVITY: f64 = 8.8541878128e-12;

pub type ParamId = u32;

pub const PARAMS_PER_MATERIAL: usize = 3;

pub fn param_id(material: u32, component: usize) -> ParamId {
    material * PARAMS_PER_MATERIAL as u32 + component as u32
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialParams {
    pub relative_permittivity: f64,
    /// S/m.
    #[serde(rename = "conductivity_S_per_m")]
    pub conductivity: f64,
    pub scattering_coefficient: f64,
}

impl Default for MaterialParams {
    fn default() -> Self {
        MaterialParams::new(3.0, 0.01, 0.3)
    }
}

impl MaterialParams {
    pub fn new(relative_permittivity: f64, conductivity: f64, scattering_coefficient: f64) -> Self {
        MaterialParams {
            relative_permittivity,
            conductivity,
            scattering_coefficient,
        }
    }

    pub fn check(&self) -> std::result::Result<(), String> {
        let all_finite = [
            self.relative_permittivity,
            self.conductivity,
            self.scattering_coefficient,
        ]
        .iter()
        .all(|x| x.is_finite());
        if !all_finite {
            return Err("non-finite material parameter".into());
        }
        if self.relative_permittivity < 1.0 {
            return Err(format!(
                "relative permittivity {} below 1",
                self.relative_permittivity
            ));
        }
        if self.conductivity < 0.0 {
            return Err(format!("negative conductivity {}", self.conductivity));
        }
        if !(0.0..=1.0).contains(&self.scattering_coefficient) {
            return Err(format!(
                "scattering coefficient {} outside [0, 1]",
                self.scattering_coefficient
            ));
        }
        Ok(())
    }

    pub fn component(&self, i: usize) -> f64 {
        match i {
            0 => self.relative_permittivity,
            1 => self.conductivity,
            2 => self.scattering_coefficient,
            _ => panic!("material component {i} out of range"),
        }
    }

    pub fn component_mut(&mut self, i: usize) -> &mut f64 {
        match i {
            0 => &mut self.relative_permittivity,
            1 => &mut self.conductivity,
            2 => &mut self.scattering_coefficient,
            _ => panic!("material component {i} out of range"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmConfig {
    /// Hz. Path coefficients are evaluated at this frequency.
    pub center_frequency: f64,
    /// Hz.
    pub bandwidth: f64,
    pub num_freq_samples: usize,
    /// Area represented by one diffusely scattering DPS, m^2 (voxel size squared).
    pub scatter_area: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            center_frequency: 8e9,
            bandwidth: 1.5e9,
            num_freq_samples: 129,
            scatter_area: 0.0625 * 0.0625,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.center_frequency > 0.0) || !(self.bandwidth > 0.0) {
            return Err(Error::Config(
                "center frequency and bandwidth must be positive".into(),
            ));
        }
        if self.num_freq_samples < 2 {
            return Err(Error::Config("at least 2 frequency samples required".into()));
        }
        if !(self.scatter_area > 0.0) {
            return Err(Error::Config("scatter_area must be positive".into()));
        }
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.center_frequency
    }

    pub fn frequency_spacing(&self) -> f64 {
        self.bandwidth / (self.num_freq_samples - 1) as f64
    }

    /// Equally spaced samples spanning `center +- bandwidth / 2`, endpoints included.
    pub fn frequencies(&self) -> Vec<f64> {
        let m = self.num_freq_samples;
        let df = self.frequency_spacing();
        let mid = (m - 1) as f64 / 2.0;
        (0..m)
            .map(|i| self.center_frequency + (i as f64 - mid) * df)
            .collect()
    }

    /// Delay spacing of the band-limited impulse response taps.
    pub fn tap_spacing(&self) -> f64 {
        1.0 / (self.num_freq_samples as f64 * self.frequency_spacing())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Polarization {
    /// Electric field perpendicular to the plane of incidence.
    Te,
    /// Electric field in the plane of incidence.
    Tm,
}

fn seed<const N: usize>(value: f64, slot: usize) -> Dual<N> {
    if slot < N {
        Dual::variable(value, slot)
    } else {
        Dual::constant(value)
    }
}

/// Complex relative permittivity `eps_r - j sigma / (2 pi f eps_0)`, with partials in
/// slots `base` (eps_r) and `base + 1` (sigma).
pub(crate) fn permittivity_at<const N: usize>(
    mat: &MaterialParams,
    frequency: f64,
    base: usize,
) -> CDual<N> {
    let eps = seed::<N>(mat.relative_permittivity, base);
    let sigma = seed::<N>(mat.conductivity, base + 1);
    let k = 1.0 / (2.0 * std::f64::consts::PI * frequency * VACUUM_PERMITTIVITY);
    let mut out = CDual::constant(Complex64::new(eps.value, -k * sigma.value));
    for i in 0..N {
        out.grad[i] = Complex64::new(eps.grad[i], -k * sigma.grad[i]);
    }
    out
}

/// Complex permittivity with partials with respect to
/// (relative permittivity, conductivity, scattering coefficient).
pub fn complex_permittivity(mat: &MaterialParams, frequency: f64) -> CDual<3> {
    permittivity_at::<3>(mat, frequency, 0)
}

/// Fresnel reflection coefficient for a wave incident from vacuum on a half space of
/// relative complex permittivity `eta`.
pub fn fresnel_reflection<const N: usize>(
    eta: CDual<N>,
    cos_theta_i: f64,
    polarization: Polarization,
) -> CDual<N> {
    let (te, tm) = fresnel_pair(eta, cos_theta_i);
    match polarization {
        Polarization::Te => te,
        Polarization::Tm => tm,
    }
}

pub(crate) fn fresnel_pair<const N: usize>(eta: CDual<N>, cos_theta_i: f64) -> (CDual<N>, CDual<N>) {
    let c = cos_theta_i.clamp(0.0, 1.0);
    let sin2 = 1.0 - c * c;
    // principal square root: non-negative real part
    let root = (eta + (-sin2)).sqrt();
    let cc = CDual::constant(Complex64::new(c, 0.0));
    let te = (cc - root) / (cc + root);
    let eta_c = eta * c;
    let tm = (eta_c - root) / (eta_c + root);
    (te, tm)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lossless_permittivity_is_real() {
        let m = MaterialParams::new(4.0, 0.0, 0.0);
        let eta = complex_permittivity(&m, 8e9);
        assert_eq!(eta.value, Complex64::new(4.0, 0.0));
        let vac = complex_permittivity(&MaterialParams::new(1.0, 0.0, 0.0), 8e9);
        assert_eq!(vac.value, Complex64::new(1.0, 0.0));
    }

    #[test]
    fn conductive_permittivity_imaginary_part() {
        let eta = complex_permittivity(&MaterialParams::new(4.0, 0.1, 0.0), 8e9);
        // -0.1 / (2 pi 8e9 * 8.8541878128e-12)
        assert!((eta.value.im - -0.224_689_3).abs() < 1e-6, "{}", eta.value.im);
        assert_eq!(eta.grad[0], Complex64::new(1.0, 0.0));
        assert!((eta.grad[1].im * 0.1 - eta.value.im).abs() < 1e-15);
    }

    #[test]
    fn fresnel_normal_incidence() {
        let eta = CDual::<0>::constant(Complex64::new(4.0, 0.0));
        let te = fresnel_reflection(eta, 1.0, Polarization::Te).value;
        let tm = fresnel_reflection(eta, 1.0, Polarization::Tm).value;
        assert!((te - Complex64::new(-1.0 / 3.0, 0.0)).norm() < 1e-15);
        assert!((tm - Complex64::new(1.0 / 3.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn fresnel_grazing_and_vacuum() {
        let eta = CDual::<0>::constant(Complex64::new(5.0, -0.3));
        for pol in [Polarization::Te, Polarization::Tm] {
            let g = fresnel_reflection(eta, 1e-9, pol).value.norm();
            assert!((g - 1.0).abs() < 1e-6);
        }
        let one = CDual::<0>::constant(Complex64::new(1.0, 0.0));
        for c in [0.05, 0.3, 0.7, 1.0] {
            for pol in [Polarization::Te, Polarization::Tm] {
                assert!(fresnel_reflection(one, c, pol).value.norm() < 1e-12);
            }
        }
    }

    #[test]
    fn frequency_grid() {
        let cfg = EmConfig::default();
        let f = cfg.frequencies();
        assert_eq!(f.len(), 129);
        assert!((f[0] - 7.25e9).abs() < 1e-3);
        assert!((f[128] - 8.75e9).abs() < 1e-3);
        assert!((f[64] - 8e9).abs() < 1e-3);
    }
}
