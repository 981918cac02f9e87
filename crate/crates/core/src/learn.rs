//! Learning material parameters from ground-truth channels.
//!
//! Each material owns three unconstrained raw values mapped to valid ranges:
//! `eps_r = 1 + softplus(raw)`, `sigma = softplus(raw)`, `S = sigmoid(raw)`.
//! Every iteration samples one link uniformly, evaluates the normalized CIR
//! error against its ground truth and takes an Adam step on the raw values.

use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::em::{EmConfig, LinkModel, MaterialParams, PARAMS_PER_MATERIAL};
use crate::error::{Error, Result};
use crate::path::PropagationPath;
use crate::scene::Scene;

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inv(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Raw values of one material: (eps_r, sigma, S) in unconstrained form.
pub fn to_raw(p: &MaterialParams) -> [f64; 3] {
    [
        softplus_inv(p.relative_permittivity - 1.0),
        softplus_inv(p.conductivity),
        logit(p.scattering_coefficient),
    ]
}

pub fn from_raw(raw: &[f64]) -> MaterialParams {
    MaterialParams {
        relative_permittivity: 1.0 + softplus(raw[0]),
        conductivity: softplus(raw[1]),
        scattering_coefficient: sigmoid(raw[2]),
    }
}

/// d(constrained)/d(raw) for the three components.
fn transform_slopes(raw: &[f64]) -> [f64; 3] {
    let s = sigmoid(raw[2]);
    [sigmoid(raw[0]), sigmoid(raw[1]), s * (1.0 - s)]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Starting point for every material.
    pub init: MaterialParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            iterations: 5000,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            init: MaterialParams::new(3.0, 0.01, 0.3),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.init.relative_permittivity > 1.0
            && self.init.conductivity > 0.0
            && self.init.scattering_coefficient > 0.0
            && self.init.scattering_coefficient < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(
                "learning rate must be >= 0, betas in [0, 1), epsilon > 0 and the initial parameters strictly inside their ranges".into(),
            ))
        }
    }
}

/// Adam on a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, config: &TrainConfig) -> Self {
        Adam {
            lr: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.epsilon,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, x: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..x.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            x[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Ground-truth band-limited CIR of one link.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub tx_index: usize,
    pub rx_index: usize,
    pub cir: Vec<Complex64>,
}

/// One optimization step: the parameters that were evaluated and their loss.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRecord {
    pub iteration: usize,
    pub rx_index: usize,
    /// `None` when the sampled link had no paths and was skipped.
    pub loss: Option<f64>,
    pub params: Vec<MaterialParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingHistory {
    /// Material labels in dense-index order.
    pub labels: Vec<u32>,
    pub records: Vec<TrainingRecord>,
    pub final_params: Vec<MaterialParams>,
}

impl TrainingHistory {
    /// CSV: `iteration,rx,loss` then `label,eps_r,sigma,S` per material.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,rx,loss");
        for l in &self.labels {
            let _ = write!(s, ",label_{l},eps_r_{l},sigma_{l},S_{l}");
        }
        s.push('\n');
        for r in &self.records {
            let _ = write!(s, "{},{},", r.iteration, r.rx_index);
            if let Some(loss) = r.loss {
                let _ = write!(s, "{loss}");
            }
            for (l, p) in self.labels.iter().zip(&r.params) {
                let _ = write!(
                    s,
                    ",{l},{},{},{}",
                    p.relative_permittivity, p.conductivity, p.scattering_coefficient
                );
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// The links being fitted with their targets.
pub struct Problem {
    pub links: Vec<LinkModel>,
    pub targets: Vec<Vec<Complex64>>,
    pub num_materials: usize,
}

impl Problem {
    pub fn new(scene: &Scene, paths: &[PropagationPath], truth: &[GroundTruth], em: &EmConfig) -> Result<Self> {
        if truth.is_empty() {
            return Err(Error::Validation("no ground-truth channels to train on".into()));
        }
        let mut links = Vec::with_capacity(truth.len());
        let mut targets = Vec::with_capacity(truth.len());
        for gt in truth {
            if gt.cir.len() != em.num_freq_samples {
                return Err(Error::GridMismatch {
                    simulated: em.num_freq_samples,
                    ground_truth: gt.cir.len(),
                });
            }
            links.push(LinkModel::new(scene, paths, gt.tx_index, gt.rx_index, em)?);
            targets.push(gt.cir.clone());
        }
        Ok(Problem {
            links,
            targets,
            num_materials: scene.materials.len(),
        })
    }

    /// Loss and gradient with respect to the raw values for link `i`;
    /// `None` if the link has no paths.
    pub fn loss_and_raw_grad(&self, i: usize, raw: &[f64]) -> Result<Option<(f64, Vec<f64>)>> {
        let link = &self.links[i];
        if link.is_empty() {
            return Ok(None);
        }
        let params = raw_to_params(raw);
        let mut grad = vec![0.0; raw.len()];
        let loss = link.loss_and_grad(&params, &self.targets[i], &mut grad)?;
        for (m, chunk) in raw.chunks(PARAMS_PER_MATERIAL).enumerate() {
            let slopes = transform_slopes(chunk);
            for c in 0..PARAMS_PER_MATERIAL {
                grad[m * PARAMS_PER_MATERIAL + c] *= slopes[c];
            }
        }
        Ok(Some((loss, grad)))
    }

    /// Mean loss over all links that have paths.
    pub fn mean_loss(&self, params: &[MaterialParams]) -> Result<f64> {
        let mut total = 0.0;
        let mut n = 0;
        for (link, target) in self.links.iter().zip(&self.targets) {
            if link.is_empty() {
                continue;
            }
            total += crate::em::cir_loss(&link.cir(params), target)?;
            n += 1;
        }
        Ok(if n == 0 { 0.0 } else { total / n as f64 })
    }

    /// Materials touched by at least one path of any link.
    pub fn materials_in_use(&self) -> Vec<u32> {
        let mut m: Vec<u32> = self.links.iter().flat_map(|l| l.materials()).collect();
        m.sort_unstable();
        m.dedup();
        m
    }
}

/// Ground truth for every (tx, rx) link, synthesized with the scene's own
/// material table.
pub fn self_consistent_truth(scene: &Scene, paths: &[PropagationPath], em: &EmConfig) -> Result<Vec<GroundTruth>> {
    let mut out = Vec::new();
    for t in 0..scene.transmitters.len() {
        for r in 0..scene.receivers.len() {
            let link = LinkModel::new(scene, paths, t, r, em)?;
            out.push(GroundTruth {
                tx_index: t,
                rx_index: r,
                cir: link.cir(scene.materials.params()),
            });
        }
    }
    Ok(out)
}

pub fn raw_to_params(raw: &[f64]) -> Vec<MaterialParams> {
    raw.chunks(PARAMS_PER_MATERIAL)
        .map(|c| {
            let p = from_raw(c);
            debug_assert!(p.check().is_ok(), "{p:?}");
            p
        })
        .collect()
}

/// Adam over the raw parameters of every material.
pub fn train(problem: &Problem, labels: &[u32], config: &TrainConfig) -> Result<TrainingHistory> {
    config.validate()?;
    let init = to_raw(&config.init);
    let mut raw: Vec<f64> = (0..problem.num_materials).flat_map(|_| init).collect();
    let mut adam = Adam::new(raw.len(), config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut records = Vec::with_capacity(config.iterations);

    for iteration in 0..config.iterations {
        let i = rng.random_range(0..problem.links.len());
        let link = &problem.links[i];
        let params = raw_to_params(&raw);
        let loss = match problem.loss_and_raw_grad(i, &raw)? {
            Some((loss, grad)) => {
                adam.step(&mut raw, &grad);
                Some(loss)
            }
            None => {
                log::warn!(
                    "iteration {iteration}: link tx {} rx {} has no paths; skipped",
                    link.tx_index,
                    link.rx_index
                );
                None
            }
        };
        records.push(TrainingRecord {
            iteration,
            rx_index: link.rx_index,
            loss,
            params,
        });
    }
    Ok(TrainingHistory {
        labels: labels.to_vec(),
        records,
        final_params: raw_to_params(&raw),
    })
}
