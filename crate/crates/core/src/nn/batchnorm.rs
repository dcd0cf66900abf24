use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
/// EMA weight given to the current batch when tracking statistics.
pub const BN_MOMENTUM: f64 = 0.1;

/// How batch-norm statistics are estimated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BnMode {
    /// Current mini-batch statistics in both training and inference.
    #[default]
    BatchAverage,
    /// Mini-batch statistics while training; re-estimated afterwards over
    /// the training data and frozen for inference.
    PostAverage,
    /// Exponential moving average while training, shared with the server.
    Tracked,
    /// Like `Tracked`, but the statistics stay on the client.
    LocallyTracked,
}

impl BnMode {
    pub fn uses_running_stats_at_eval(self) -> bool {
        !matches!(self, BnMode::BatchAverage)
    }

    pub fn tracks_while_training(self) -> bool {
        matches!(self, BnMode::Tracked | BnMode::LocallyTracked)
    }

    /// Whether running statistics take part in server averaging.
    pub fn aggregates_running_stats(self) -> bool {
        matches!(self, BnMode::Tracked | BnMode::PostAverage)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub num_features: usize,
    pub mode: BnMode,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub eps: f64,
}

/// Saved state of one batch-norm evaluation.
#[derive(Clone, Debug)]
pub struct BnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    pub(crate) mean: Vec<f64>,
    pub(crate) var: Vec<f64>,
    pub(crate) count: usize,
    batch_stats: bool,
    dims: (usize, usize, usize),
}

impl BatchNorm {
    pub fn new(num_features: usize, mode: BnMode) -> Self {
        BatchNorm {
            num_features,
            mode,
            gamma: Tensor::full(&[num_features], 1.0),
            beta: Tensor::zeros(&[num_features]),
            running_mean: Tensor::zeros(&[num_features]),
            running_var: Tensor::full(&[num_features], 1.0),
            eps: BN_EPS,
        }
    }

    fn dims(&self, x: &Tensor) -> Result<(usize, usize, usize)> {
        let s = x.shape();
        let (n, c, sp) = match s.len() {
            2 => (s[0], s[1], 1),
            4 => (s[0], s[1], s[2] * s[3]),
            _ => return Err(Error::shape("batch norm input rank", &[2, 4], &[s.len()])),
        };
        if c != self.num_features {
            return Err(Error::shape("batch norm features", &[self.num_features], &[c]));
        }
        Ok((n, c, sp))
    }

    /// Normalize `x` per channel; `(N,C)` or `(N,C,H,W)` input.
    pub fn forward(&self, x: &Tensor, phase: Phase) -> Result<(Tensor, BnCache)> {
        let (n, c, sp) = self.dims(x)?;
        let count = n * sp;
        let xd = x.data();
        let use_batch = phase == Phase::Train || !self.mode.uses_running_stats_at_eval();
        if use_batch && n == 1 && phase == Phase::Eval {
            log::debug!("batch-average statistics from a single sample; variance floors at eps");
        }
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        if use_batch {
            for ni in 0..n {
                for ci in 0..c {
                    let base = (ni * c + ci) * sp;
                    mean[ci] += xd[base..base + sp].iter().sum::<f64>();
                }
            }
            mean.iter_mut().for_each(|m| *m /= count as f64);
            for ni in 0..n {
                for ci in 0..c {
                    let base = (ni * c + ci) * sp;
                    let m = mean[ci];
                    var[ci] += xd[base..base + sp].iter().map(|v| (v - m) * (v - m)).sum::<f64>();
                }
            }
            var.iter_mut().for_each(|v| *v /= count as f64);
        } else {
            mean.copy_from_slice(self.running_mean.data());
            var.copy_from_slice(self.running_var.data());
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut xhat = vec![0.0; xd.len()];
        let mut y = vec![0.0; xd.len()];
        let (g, b) = (self.gamma.data(), self.beta.data());
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * sp;
                for i in base..base + sp {
                    let h = (xd[i] - mean[ci]) * inv_std[ci];
                    xhat[i] = h;
                    y[i] = g[ci] * h + b[ci];
                }
            }
        }
        let cache = BnCache {
            xhat,
            inv_std,
            mean,
            var,
            count,
            batch_stats: use_batch,
            dims: (n, c, sp),
        };
        Ok((Tensor::from_vec(x.shape(), y)?, cache))
    }

    /// Back-propagate `weight * dy`; accumulates into `dgamma`/`dbeta` and
    /// returns the input gradient.
    pub fn backward(
        &self,
        cache: &BnCache,
        dy: &[f64],
        weight: f64,
        dgamma: &mut [f64],
        dbeta: &mut [f64],
    ) -> Vec<f64> {
        let (n, c, sp) = cache.dims;
        let g = self.gamma.data();
        let mut dx = vec![0.0; dy.len()];
        let cnt = cache.count as f64;
        for ci in 0..c {
            let mut sum_dy = 0.0;
            let mut sum_dy_xhat = 0.0;
            for ni in 0..n {
                let base = (ni * c + ci) * sp;
                for i in base..base + sp {
                    let d = weight * dy[i];
                    sum_dy += d;
                    sum_dy_xhat += d * cache.xhat[i];
                }
            }
            dbeta[ci] += sum_dy;
            dgamma[ci] += sum_dy_xhat;
            let k = g[ci] * cache.inv_std[ci];
            for ni in 0..n {
                let base = (ni * c + ci) * sp;
                for i in base..base + sp {
                    let d = weight * dy[i];
                    dx[i] = if cache.batch_stats {
                        k * (d - sum_dy / cnt - cache.xhat[i] * sum_dy_xhat / cnt)
                    } else {
                        k * d
                    };
                }
            }
        }
        dx
    }

    /// Fold a training batch into the running statistics (tracked modes only).
    pub fn commit(&mut self, cache: &BnCache) {
        if !self.mode.tracks_while_training() || !cache.batch_stats {
            return;
        }
        let m = BN_MOMENTUM;
        for (r, &b) in self.running_mean.data_mut().iter_mut().zip(&cache.mean) {
            *r = (1.0 - m) * *r + m * b;
        }
        for (r, &b) in self.running_var.data_mut().iter_mut().zip(&cache.var) {
            *r = (1.0 - m) * *r + m * b;
        }
    }
}

/// Which batch-norm branch a forward pass runs through.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BnRoute {
    Clean,
    Noised,
    /// `(1-λ)·BN_c(x) + λ·BN_n(x)`
    Mix(f64),
}

impl BnRoute {
    pub fn validate(self) -> Result<Self> {
        if let BnRoute::Mix(l) = self {
            if !(0.0..=1.0).contains(&l) || l.is_nan() {
                return Err(Error::Invalid(format!("mixing weight {l} outside [0, 1]")));
            }
        }
        Ok(self)
    }
}

/// Paired clean/noised batch-norm branches sharing the surrounding weights.
#[derive(Clone, Debug, PartialEq)]
pub struct DualBn {
    pub clean: BatchNorm,
    pub noised: BatchNorm,
}

#[derive(Clone, Debug)]
pub struct DualBnCache {
    pub(crate) clean: Option<(BnCache, f64)>,
    pub(crate) noised: Option<(BnCache, f64)>,
}

impl DualBn {
    pub fn new(num_features: usize, mode: BnMode) -> Self {
        DualBn {
            clean: BatchNorm::new(num_features, mode),
            noised: BatchNorm::new(num_features, mode),
        }
    }

    pub fn forward(&self, x: &Tensor, phase: Phase, route: BnRoute) -> Result<(Tensor, DualBnCache)> {
        match route.validate()? {
            BnRoute::Clean => {
                let (y, c) = self.clean.forward(x, phase)?;
                Ok((y, DualBnCache { clean: Some((c, 1.0)), noised: None }))
            }
            BnRoute::Noised => {
                let (y, c) = self.noised.forward(x, phase)?;
                Ok((y, DualBnCache { clean: None, noised: Some((c, 1.0)) }))
            }
            BnRoute::Mix(lambda) => {
                let (yc, cc) = self.clean.forward(x, phase)?;
                let (yn, cn) = self.noised.forward(x, phase)?;
                let data = yc
                    .data()
                    .iter()
                    .zip(yn.data())
                    .map(|(a, b)| (1.0 - lambda) * a + lambda * b)
                    .collect();
                Ok((
                    Tensor::from_vec(x.shape(), data)?,
                    DualBnCache {
                        clean: Some((cc, 1.0 - lambda)),
                        noised: Some((cn, lambda)),
                    },
                ))
            }
        }
    }

    /// Running statistics only move when a single branch saw the batch.
    pub fn commit(&mut self, cache: &DualBnCache) {
        match (&cache.clean, &cache.noised) {
            (Some((c, _)), None) => self.clean.commit(c),
            (None, Some((c, _))) => self.noised.commit(c),
            _ => {}
        }
    }
}
