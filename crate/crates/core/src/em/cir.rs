//! Channel frequency / impulse response synthesis and the normalized CIR loss.
//!
//! The frequency grid has `M` samples `f_m` evenly spread over the band,
//! endpoints included. The response is
//!
//! ```text
//! H[m] = sum_p a_p exp(-j 2 pi f_m tau_p)
//! h[n] = 1/M sum_m H[m] exp(+j 2 pi m n / M)
//! ```
//!
//! so tap `n` of the band-limited CIR sits at delay `n / (M df)`.
//!
//! Gradients flow backwards through the (linear) DFT by hand: for a real loss
//! `L(h)` with `dL = sum Re(conj(G_n) dh_n)`, the adjoint on the CFR is
//! `G_H = FFT(G) / M` and on each path coefficient
//! `G_a = sum_m G_H[m] conj(E_pm)`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use super::{EmConfig, MaterialParams, PathCoefficient, PathGeometry};
use crate::error::{Error, Result};
use crate::path::PropagationPath;
use crate::scene::Scene;

/// One propagation path seen as a channel tap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tap {
    pub delay: f64,
    pub coefficient: Complex64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelImpulseResponse {
    /// Per-path taps in input order.
    pub taps: Vec<Tap>,
    pub frequencies: Vec<f64>,
    pub cfr: Vec<Complex64>,
    /// Band-limited CIR, one sample per `tap_spacing`.
    pub cir: Vec<Complex64>,
    pub tap_spacing: f64,
}

impl ChannelImpulseResponse {
    pub fn from_taps(taps: Vec<Tap>, config: &EmConfig) -> Self {
        let frequencies = config.frequencies();
        let cfr = cfr_direct(&taps, &frequencies);
        let cir = inverse_dft(&cfr);
        ChannelImpulseResponse {
            taps,
            frequencies,
            cfr,
            cir,
            tap_spacing: config.tap_spacing(),
        }
    }

    pub fn pdp(&self) -> Vec<f64> {
        self.cir.iter().map(|h| h.norm_sqr()).collect()
    }

    pub fn cir_delays(&self) -> Vec<f64> {
        (0..self.cir.len()).map(|n| n as f64 * self.tap_spacing).collect()
    }

    pub fn energy(&self) -> f64 {
        self.cir.iter().map(|h| h.norm_sqr()).sum()
    }
}

fn cfr_direct(taps: &[Tap], frequencies: &[f64]) -> Vec<Complex64> {
    let mut cfr = vec![Complex64::new(0.0, 0.0); frequencies.len()];
    for tap in taps {
        for (h, f) in cfr.iter_mut().zip(frequencies) {
            *h += tap.coefficient * Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * f * tap.delay);
        }
    }
    cfr
}

fn inverse_dft(cfr: &[Complex64]) -> Vec<Complex64> {
    if cfr.is_empty() {
        return Vec::new();
    }
    let fft = FftPlanner::new().plan_fft_inverse(cfr.len());
    let mut buf = cfr.to_vec();
    fft.process(&mut buf);
    let scale = 1.0 / cfr.len() as f64;
    buf.iter_mut().for_each(|h| *h *= scale);
    buf
}

/// CIR of a path list. Paths may belong to any links; callers normally pass
/// the paths of one (tx, rx) pair. An empty list yields a zero response.
pub fn synthesize_cir(paths: &[PropagationPath], scene: &Scene, config: &EmConfig) -> Result<ChannelImpulseResponse> {
    config.validate()?;
    let taps = paths
        .par_iter()
        .map(|p| {
            let a = super::path_coefficient(p, scene, config)?;
            let tx = &scene.transmitters[p.tx_index];
            let rx = &scene.receivers[p.rx_index];
            Ok(Tap {
                delay: p.length(tx, rx) / super::SPEED_OF_LIGHT,
                coefficient: a.value,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ChannelImpulseResponse::from_taps(taps, config))
}

/// Normalized squared error `|h - h_hat|^2 / |h_hat|^2`.
pub fn cir_loss(h: &[Complex64], h_hat: &[Complex64]) -> Result<f64> {
    Ok(cir_loss_grad(h, h_hat)?.0)
}

/// Loss and its gradient `G` with `dL = sum_n Re(conj(G_n) dh_n)`.
pub fn cir_loss_grad(h: &[Complex64], h_hat: &[Complex64]) -> Result<(f64, Vec<Complex64>)> {
    if h.len() != h_hat.len() {
        return Err(Error::GridMismatch {
            simulated: h.len(),
            ground_truth: h_hat.len(),
        });
    }
    let norm: f64 = h_hat.iter().map(|x| x.norm_sqr()).sum();
    if !(norm > 0.0) {
        return Err(Error::ZeroGroundTruth);
    }
    let mut err = 0.0;
    let grad = h
        .iter()
        .zip(h_hat)
        .map(|(a, b)| {
            let d = a - b;
            err += d.norm_sqr();
            d * (2.0 / norm)
        })
        .collect();
    Ok((err / norm, grad))
}

/// Differentiable forward model of one link with frozen path geometry.
///
/// Per-frequency phasors are generated by a rotor recurrence
/// (`E[m+1] = E[m] exp(-j 2 pi df tau)`), one complex product per sample.
pub struct LinkModel {
    pub tx_index: usize,
    pub rx_index: usize,
    paths: Vec<PathGeometry>,
    /// Per path: phasor at the first frequency and the per-sample rotation.
    rotors: Vec<(Complex64, Complex64)>,
    config: EmConfig,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for LinkModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LinkModel")
            .field("tx_index", &self.tx_index)
            .field("rx_index", &self.rx_index)
            .field("paths", &self.paths.len())
            .finish()
    }
}

impl LinkModel {
    /// Keeps only the paths of link (`tx_index`, `rx_index`) that carry energy.
    pub fn new(
        scene: &Scene,
        paths: &[PropagationPath],
        tx_index: usize,
        rx_index: usize,
        config: &EmConfig,
    ) -> Result<Self> {
        config.validate()?;
        let n_mat = scene.materials.len() as u32;
        let tx = scene.transmitters.get(tx_index).ok_or(Error::IndexOutOfRange {
            index: tx_index,
            len: scene.transmitters.len(),
        })?;
        let rx = scene.receivers.get(rx_index).ok_or(Error::IndexOutOfRange {
            index: rx_index,
            len: scene.receivers.len(),
        })?;
        let mut geoms = Vec::new();
        for p in paths.iter().filter(|p| p.tx_index == tx_index && p.rx_index == rx_index) {
            if let Some(bad) = p.interactions.iter().find(|i| i.material_label >= n_mat) {
                return Err(Error::UnknownMaterial(bad.material_label));
            }
            let g = PathGeometry::new(p, tx, rx, config);
            if g.contributes() {
                geoms.push(g);
            }
        }
        Ok(Self::from_geometry(tx_index, rx_index, geoms, config))
    }

    pub fn from_geometry(tx_index: usize, rx_index: usize, paths: Vec<PathGeometry>, config: &EmConfig) -> Self {
        let freqs = config.frequencies();
        let df = config.frequency_spacing();
        let rotors = paths
            .iter()
            .map(|g| {
                let w = -2.0 * std::f64::consts::PI * g.delay();
                (Complex64::from_polar(1.0, w * freqs[0]), Complex64::from_polar(1.0, w * df))
            })
            .collect();
        let mut planner = FftPlanner::new();
        LinkModel {
            tx_index,
            rx_index,
            forward: planner.plan_fft_forward(freqs.len()),
            inverse: planner.plan_fft_inverse(freqs.len()),
            paths,
            rotors,
            config: config.clone(),
        }
    }

    pub fn num_paths(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// Materials (dense indices) used by at least one path of the link.
    pub fn materials(&self) -> Vec<u32> {
        let mut m: Vec<u32> = self.paths.iter().flat_map(|g| g.materials.iter().copied()).collect();
        m.sort_unstable();
        m.dedup();
        m
    }

    fn m(&self) -> usize {
        self.config.num_freq_samples
    }

    /// Adds `a * E_p[m]` to `out[m]` for every frequency.
    fn accumulate(&self, p: usize, a: Complex64, out: &mut [Complex64]) {
        let (mut e, step) = self.rotors[p];
        e *= a;
        for h in out.iter_mut() {
            *h += e;
            e *= step;
        }
    }

    /// `sum_m g[m] conj(E_p[m])`.
    fn correlate(&self, p: usize, g: &[Complex64]) -> Complex64 {
        let (e0, step) = self.rotors[p];
        let (mut e, step) = (e0.conj(), step.conj());
        let mut acc = Complex64::new(0.0, 0.0);
        for gm in g {
            acc += gm * e;
            e *= step;
        }
        acc
    }

    pub fn coefficients(&self, params: &[MaterialParams]) -> Vec<PathCoefficient> {
        self.paths
            .par_iter()
            .map(|g| g.coefficient(params, &self.config))
            .collect()
    }

    fn cfr_of(&self, values: impl Iterator<Item = Complex64>) -> Vec<Complex64> {
        let mut cfr = vec![Complex64::new(0.0, 0.0); self.m()];
        for (p, a) in values.enumerate() {
            self.accumulate(p, a, &mut cfr);
        }
        cfr
    }

    fn to_cir(&self, mut cfr: Vec<Complex64>) -> Vec<Complex64> {
        self.inverse.process(&mut cfr);
        let scale = 1.0 / self.m() as f64;
        cfr.iter_mut().for_each(|h| *h *= scale);
        cfr
    }

    pub fn cfr(&self, params: &[MaterialParams]) -> Vec<Complex64> {
        self.cfr_of(self.paths.iter().map(|g| g.value(params, &self.config)))
    }

    pub fn cir(&self, params: &[MaterialParams]) -> Vec<Complex64> {
        self.to_cir(self.cfr(params))
    }

    pub fn response(&self, params: &[MaterialParams]) -> ChannelImpulseResponse {
        let taps = self
            .paths
            .iter()
            .map(|g| Tap {
                delay: g.delay(),
                coefficient: g.value(params, &self.config),
            })
            .collect();
        let cfr = self.cfr(params);
        ChannelImpulseResponse {
            taps,
            frequencies: self.config.frequencies(),
            cir: self.to_cir(cfr.clone()),
            cfr,
            tap_spacing: self.config.tap_spacing(),
        }
    }

    /// CIR and its Jacobian: `jac[id][n] = d cir[n] / d param(id)` for every
    /// parameter id below `num_params`.
    pub fn cir_jacobian(&self, params: &[MaterialParams], num_params: usize) -> (Vec<Complex64>, Vec<Vec<Complex64>>) {
        let coeffs = self.coefficients(params);
        let zero = Complex64::new(0.0, 0.0);
        let mut dcfr = vec![vec![zero; self.m()]; num_params];
        for (p, c) in coeffs.iter().enumerate() {
            for &(id, da) in &c.grad {
                if let Some(col) = dcfr.get_mut(id as usize) {
                    self.accumulate(p, da, col);
                }
            }
        }
        let cir = self.to_cir(self.cfr_of(coeffs.iter().map(|c| c.value)));
        let jac = dcfr.into_iter().map(|col| self.to_cir(col)).collect();
        (cir, jac)
    }

    /// Loss against `target` with its gradient accumulated into `grad`
    /// (indexed by parameter id).
    pub fn loss_and_grad(&self, params: &[MaterialParams], target: &[Complex64], grad: &mut [f64]) -> Result<f64> {
        let coeffs = self.coefficients(params);
        let cir = self.to_cir(self.cfr_of(coeffs.iter().map(|c| c.value)));
        let (loss, mut g) = cir_loss_grad(&cir, target)?;
        self.forward.process(&mut g);
        let scale = 1.0 / self.m() as f64;
        for (p, c) in coeffs.iter().enumerate() {
            let g_a = self.correlate(p, &g) * scale;
            for &(id, da) in &c.grad {
                if let Some(slot) = grad.get_mut(id as usize) {
                    *slot += (g_a.conj() * da).re;
                }
            }
        }
        Ok(loss)
    }
}

fn power_db(h: &Complex64) -> f64 {
    10.0 * h.norm_sqr().log10()
}

/// Band-limited CIR as `delay_s,re,im,power_db`.
pub fn write_cir_csv(path: &Path, cir: &ChannelImpulseResponse) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut body = String::from("delay_s,re,im,power_db\n");
    for (t, h) in cir.cir_delays().iter().zip(&cir.cir) {
        body.push_str(&format!("{},{},{},{}\n", t, h.re, h.im, power_db(h)));
    }
    w.write_all(body.as_bytes()).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// CFR as `freq_hz,re,im`.
pub fn write_cfr_csv(path: &Path, cir: &ChannelImpulseResponse) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut body = String::from("freq_hz,re,im\n");
    for (f, h) in cir.frequencies.iter().zip(&cir.cfr) {
        body.push_str(&format!("{},{},{}\n", f, h.re, h.im));
    }
    w.write_all(body.as_bytes()).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Reads a file written by [`write_cir_csv`]; returns (delays, taps).
pub fn read_cir_csv(path: &Path) -> Result<(Vec<f64>, Vec<Complex64>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut delays = Vec::new();
    let mut taps = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if i == 0 || line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let num = |col: usize| -> Result<f64> {
            fields
                .get(col)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::Parse {
                    line: i + 1,
                    column: col + 1,
                    message: format!("expected a number in column {} of {}", col + 1, path.display()),
                })
        };
        delays.push(num(0)?);
        taps.push(Complex64::new(num(1)?, num(2)?));
    }
    Ok((delays, taps))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn unit_tap_at_zero_delay_is_flat() {
        let cfg = EmConfig::default();
        let r = ChannelImpulseResponse::from_taps(vec![Tap { delay: 0.0, coefficient: c(1.0, 0.0) }], &cfg);
        assert_eq!(r.cfr.len(), 129);
        assert!(r.cfr.iter().all(|h| (h - c(1.0, 0.0)).norm() < 1e-15));
        // flat spectrum -> impulse at tap 0
        assert!((r.cir[0] - c(1.0, 0.0)).norm() < 1e-12);
        assert!(r.cir[1..].iter().all(|h| h.norm() < 1e-12));
    }

    #[test]
    fn delayed_tap_has_linear_phase() {
        let cfg = EmConfig::default();
        let tau = 10e-9;
        let r = ChannelImpulseResponse::from_taps(vec![Tap { delay: tau, coefficient: c(1.0, 0.0) }], &cfg);
        let df = cfg.frequency_spacing();
        for w in r.cfr.windows(2) {
            assert!((w[0].norm() - 1.0).abs() < 1e-12);
            let dphi = (w[1] / w[0]).arg();
            let expected = (-2.0 * std::f64::consts::PI * df * tau + std::f64::consts::PI)
                .rem_euclid(2.0 * std::f64::consts::PI)
                - std::f64::consts::PI;
            assert!((dphi - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn loss_anchors() {
        let h_hat = vec![c(1.0, -2.0), c(0.5, 0.25), c(0.0, 3.0)];
        let zero = vec![c(0.0, 0.0); 3];
        let double: Vec<_> = h_hat.iter().map(|x| x * 2.0).collect();
        assert_eq!(cir_loss(&h_hat, &h_hat).unwrap(), 0.0);
        assert!((cir_loss(&zero, &h_hat).unwrap() - 1.0).abs() < 1e-12);
        assert!((cir_loss(&double, &h_hat).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(cir_loss(&zero[..2], &h_hat), Err(Error::GridMismatch { .. })));
        assert!(matches!(cir_loss(&h_hat, &zero), Err(Error::ZeroGroundTruth)));
    }

    #[test]
    fn empty_path_list_gives_zero_response() {
        let cfg = EmConfig::default();
        let r = ChannelImpulseResponse::from_taps(Vec::new(), &cfg);
        assert_eq!(r.cir.len(), 129);
        assert_eq!(r.energy(), 0.0);
    }

    #[test]
    fn csv_round_trip() {
        let cfg = EmConfig::default();
        let r = ChannelImpulseResponse::from_taps(
            vec![
                Tap { delay: 3e-9, coefficient: c(0.1, -0.2) },
                Tap { delay: 17e-9, coefficient: c(-0.03, 0.05) },
            ],
            &cfg,
        );
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cir.csv");
        write_cir_csv(&p, &r).unwrap();
        let (delays, taps) = read_cir_csv(&p).unwrap();
        assert_eq!(taps, r.cir);
        assert_eq!(delays, r.cir_delays());
        write_cfr_csv(&dir.path().join("cfr.csv"), &r).unwrap();
    }
}
