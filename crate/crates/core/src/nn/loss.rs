use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Scalar training objective over a batch of logits.
pub trait Objective: Sync {
    /// Mean loss and its gradient with respect to `logits`.
    fn loss_grad(&self, logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)>;
}

/// Softmax cross-entropy, optionally normalized over a subset of classes.
#[derive(Clone, Debug, Default)]
pub struct CrossEntropy {
    present: Option<Vec<bool>>,
}

impl CrossEntropy {
    pub fn new() -> Self {
        CrossEntropy { present: None }
    }

    /// Absent classes neither enter the softmax normalizer nor receive
    /// gradient.
    pub fn masked(classes: usize, present: &[usize]) -> Result<Self> {
        let mut mask = vec![false; classes];
        for &c in present {
            if c >= classes {
                return Err(Error::Invalid(format!("class {c} out of range for {classes} classes")));
            }
            mask[c] = true;
        }
        Ok(CrossEntropy { present: Some(mask) })
    }
}

impl Objective for CrossEntropy {
    fn loss_grad(&self, logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
        let s = logits.shape();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(Error::shape("logits vs labels", &[labels.len(), 0], s));
        }
        let (n, c) = (s[0], s[1]);
        if let Some(m) = &self.present {
            if m.len() != c {
                return Err(Error::shape("class mask", &[c], &[m.len()]));
            }
        }
        let keep = |j: usize| self.present.as_ref().is_none_or(|m| m[j]);
        let mut grad = vec![0.0; n * c];
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            if y >= c {
                return Err(Error::Invalid(format!("label {y} out of range for {c} classes")));
            }
            if !keep(y) {
                return Err(Error::Invalid(format!("label {y} is not among the present classes")));
            }
            let row = logits.row(i);
            let max = (0..c).filter(|&j| keep(j)).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = (0..c).filter(|&j| keep(j)).map(|j| (row[j] - max).exp()).sum();
            let lse = max + z.ln();
            total += lse - row[y];
            for j in (0..c).filter(|&j| keep(j)) {
                let p = (row[j] - lse).exp();
                grad[i * c + j] = (p - if j == y { 1.0 } else { 0.0 }) / n as f64;
            }
        }
        Ok((total / n as f64, Tensor::from_vec(s, grad)?))
    }
}

/// Cross-entropy normalized over `present_classes` only.
pub fn masked_cross_entropy(logits: &Tensor, labels: &[usize], present_classes: &[usize]) -> Result<(f64, Tensor)> {
    let classes = logits.shape().get(1).copied().unwrap_or(0);
    CrossEntropy::masked(classes, present_classes)?.loss_grad(logits, labels)
}

/// Fraction of rows whose arg-max logit equals the label.
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    correct(logits, labels) as f64 / labels.len() as f64
}

pub fn correct(logits: &Tensor, labels: &[usize]) -> usize {
    labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| {
            let row = logits.row(i);
            let best = row
                .iter()
                .enumerate()
                .fold(0, |b, (j, &v)| if v > row[b] { j } else { b });
            best == y
        })
        .count()
}
