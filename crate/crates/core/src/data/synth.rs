//! Gaussian class clusters under per-domain affine shifts.
//!
//! Class prototypes are orthogonal (when `classes * modes_per_class <= dim`)
//! and scaled so that any two prototypes sit exactly `margin` apart. Samples
//! are `prototype + noise * N(0, I)`. Domain `d` then applies
//! `x -> (1 + d * domain_scale) * rot(d * domain_rotation) x + domain_shift * u_d`,
//! where `rot` turns consecutive coordinate pairs and `u_d` is a random unit
//! vector. Finally every domain is mapped into `[0, 1]` by one shared linear
//! map, so the relative geometry between domains is preserved.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub classes: usize,
    pub domains: usize,
    pub train_per_domain: usize,
    pub test_per_domain: usize,
    /// Feature dimension; ignored when `image_side` is set.
    pub dim: usize,
    /// Render samples as `1 x side x side` images.
    pub image_side: Option<usize>,
    pub margin: f64,
    pub noise: f64,
    pub modes_per_class: usize,
    pub domain_shift: f64,
    pub domain_rotation: f64,
    pub domain_scale: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            classes: 10,
            domains: 3,
            train_per_domain: 1200,
            test_per_domain: 600,
            dim: 64,
            image_side: Some(8),
            margin: 6.0,
            noise: 1.0,
            modes_per_class: 1,
            domain_shift: 2.0,
            domain_rotation: 0.6,
            domain_scale: 0.2,
        }
    }
}

impl SynthConfig {
    pub fn feature_dim(&self) -> usize {
        self.image_side.map_or(self.dim, |s| s * s)
    }

    fn sample_shape(&self) -> Vec<usize> {
        match self.image_side {
            Some(s) => vec![1, s, s],
            None => vec![self.dim],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.classes >= 1, "classes must be >= 1"),
            (self.domains >= 1, "domains must be >= 1"),
            (self.train_per_domain >= 1, "train_per_domain must be >= 1"),
            (self.feature_dim() >= 1, "feature dimension must be >= 1"),
            (self.modes_per_class >= 1, "modes_per_class must be >= 1"),
            (self.margin.is_finite() && self.margin >= 0.0, "margin must be finite and >= 0"),
            (self.noise.is_finite() && self.noise >= 0.0, "noise must be finite and >= 0"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::Config(format!("synthetic data: {msg}"))),
            None => Ok(()),
        }
    }
}

/// Generated domains plus the raw-space geometry, for oracle checks.
#[derive(Clone, Debug)]
pub struct SynthData {
    /// `(train, test)` per domain.
    pub domains: Vec<(LabeledDataset, LabeledDataset)>,
    /// Prototypes indexed `[class * modes_per_class + mode]`, before any
    /// domain transform or normalization.
    pub prototypes: Vec<Vec<f64>>,
    /// Normalization applied to raw features: `x01 = (x - offset) * scale`.
    pub offset: f64,
    pub scale: f64,
}

fn gaussian_vec<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

fn box_blur(v: &[f64], side: usize) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for i in 0..side {
        for j in 0..side {
            let mut acc = 0.0;
            let mut n = 0.0;
            for di in i.saturating_sub(1)..(i + 2).min(side) {
                for dj in j.saturating_sub(1)..(j + 2).min(side) {
                    acc += v[di * side + dj];
                    n += 1.0;
                }
            }
            out[i * side + j] = acc / n;
        }
    }
    out
}

fn prototypes<R: Rng + ?Sized>(cfg: &SynthConfig, rng: &mut R) -> Vec<Vec<f64>> {
    let d = cfg.feature_dim();
    let count = cfg.classes * cfg.modes_per_class;
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut v = gaussian_vec(rng, d);
        if let Some(side) = cfg.image_side {
            v = box_blur(&v, side);
        }
        if count <= d {
            for b in &basis {
                let p = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
        }
        normalize(&mut v);
        basis.push(v);
    }
    // Orthonormal vectors are sqrt(2) apart.
    let s = cfg.margin / std::f64::consts::SQRT_2;
    basis.into_iter().map(|v| v.into_iter().map(|x| x * s).collect()).collect()
}

struct DomainMap {
    scale: f64,
    angle: f64,
    shift: Vec<f64>,
}

impl DomainMap {
    fn apply(&self, x: &mut [f64]) {
        let (c, s) = (self.angle.cos(), self.angle.sin());
        for pair in x.chunks_exact_mut(2) {
            let (a, b) = (pair[0], pair[1]);
            pair[0] = c * a - s * b;
            pair[1] = s * a + c * b;
        }
        x.iter_mut().zip(&self.shift).for_each(|(v, t)| *v = self.scale * *v + t);
    }
}

fn draw<R: Rng + ?Sized>(
    cfg: &SynthConfig,
    protos: &[Vec<f64>],
    map: &DomainMap,
    n: usize,
    rng: &mut R,
) -> (Vec<f64>, Vec<usize>) {
    let d = cfg.feature_dim();
    let mut labels: Vec<usize> = (0..n).map(|i| i % cfg.classes).collect();
    labels.shuffle(rng);
    let mut data = Vec::with_capacity(n * d);
    for &y in &labels {
        let mode = rng.random_range(0..cfg.modes_per_class);
        let proto = &protos[y * cfg.modes_per_class + mode];
        let mut x: Vec<f64> = proto
            .iter()
            .map(|&m| {
                let z: f64 = StandardNormal.sample(rng);
                m + cfg.noise * z
            })
            .collect();
        map.apply(&mut x);
        data.extend(x);
    }
    (data, labels)
}

/// Generate `cfg.domains` train/test pairs from `seed`.
pub fn synth_multidomain(cfg: &SynthConfig, seed: u64) -> Result<SynthData> {
    cfg.validate()?;
    let d = cfg.feature_dim();
    let mut r = rng::stream(seed, &[rng::TAG_DATA, 10]);
    let protos = prototypes(cfg, &mut r);
    let mut raw = Vec::with_capacity(cfg.domains);
    for dom in 0..cfg.domains {
        let mut shift = gaussian_vec(&mut r, d);
        normalize(&mut shift);
        let map = DomainMap {
            scale: 1.0 + dom as f64 * cfg.domain_scale,
            angle: dom as f64 * cfg.domain_rotation,
            shift: shift.into_iter().map(|x| x * cfg.domain_shift).collect(),
        };
        let mut dr = rng::stream(seed, &[rng::TAG_DATA, 11, dom as u64]);
        let train = draw(cfg, &protos, &map, cfg.train_per_domain, &mut dr);
        let test = draw(cfg, &protos, &map, cfg.test_per_domain, &mut dr);
        raw.push((train, test));
    }
    let (lo, hi) = raw
        .iter()
        .flat_map(|(a, b)| a.0.iter().chain(&b.0))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let scale = if hi > lo { 1.0 / (hi - lo) } else { 1.0 };
    let offset = if lo.is_finite() { lo } else { 0.0 };
    let shape = cfg.sample_shape();
    let build = |(data, labels): (Vec<f64>, Vec<usize>), dom: usize| -> Result<LabeledDataset> {
        let n = labels.len();
        let mut full = vec![n];
        full.extend_from_slice(&shape);
        let data = data.into_iter().map(|v| ((v - offset) * scale).clamp(0.0, 1.0)).collect();
        LabeledDataset::new(Tensor::from_vec(&full, data)?, labels, cfg.classes, Some(dom))
    };
    let mut domains = Vec::with_capacity(cfg.domains);
    for (dom, (train, test)) in raw.into_iter().enumerate() {
        domains.push((build(train, dom)?, build(test, dom)?));
    }
    Ok(SynthData { domains, prototypes: protos, offset, scale })
}
