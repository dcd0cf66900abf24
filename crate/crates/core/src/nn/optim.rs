use super::tensor::Tensor;
use crate::error::{Error, Result};

/// SGD with heavy-ball momentum and L2 weight decay:
/// `g' = g + wd·p`, `v ← μ·v + g'`, `p ← p − lr·v`.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    buffers: Vec<Tensor>,
}

impl Default for Sgd {
    fn default() -> Self {
        Sgd::new(0.9, 5e-4)
    }
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd { momentum, weight_decay, buffers: Vec::new() }
    }

    pub fn buffers(&self) -> &[Tensor] {
        &self.buffers
    }

    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor], lr: f64) -> Result<()> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::Invalid(format!("learning rate {lr} must be positive")));
        }
        if params.len() != grads.len() {
            return Err(Error::shape("gradient count", &[params.len()], &[grads.len()]));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::shape(format!("gradient {i}"), p.shape(), g.shape()));
            }
            if let Some(j) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of parameter {i} (shape {:?}) at element {j}: {}",
                    g.shape(),
                    g.data()[j]
                )));
            }
        }
        if self.buffers.is_empty() {
            self.buffers = grads.iter().map(|g| Tensor::zeros(g.shape())).collect();
        }
        for ((p, g), v) in params.into_iter().zip(grads).zip(&mut self.buffers) {
            for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                let d = gv + self.weight_decay * *pv;
                *vv = self.momentum * *vv + d;
                *pv -= lr * *vv;
            }
        }
        Ok(())
    }
}
