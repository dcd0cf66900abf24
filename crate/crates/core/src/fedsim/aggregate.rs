use crate::error::{Error, Result};
use crate::nn::ModelGraph;

/// One client's trained copy of a base.
#[derive(Clone, Debug, PartialEq)]
pub struct Contribution {
    pub client: usize,
    /// `|D_k|`.
    pub weight: f64,
    pub params: Vec<f64>,
    pub buffers: Vec<f64>,
}

/// Per-base contributions for one round. Finalization orders contributions
/// by client id, so the result does not depend on arrival order.
#[derive(Clone, Debug)]
pub struct AggregationAccumulator {
    per_base: Vec<Vec<Contribution>>,
}

impl AggregationAccumulator {
    pub fn new(m: usize) -> Self {
        AggregationAccumulator { per_base: vec![Vec::new(); m] }
    }

    pub fn add(&mut self, base: usize, c: Contribution) -> Result<()> {
        let slot = self
            .per_base
            .get_mut(base)
            .ok_or_else(|| Error::Invalid(format!("base {base} out of range")))?;
        if !(c.weight.is_finite() && c.weight > 0.0) {
            return Err(Error::Invalid(format!("contribution weight {} must be > 0", c.weight)));
        }
        slot.push(c);
        Ok(())
    }

    fn sorted(&self, base: usize) -> Vec<&Contribution> {
        let mut v: Vec<&Contribution> = self.per_base[base].iter().collect();
        v.sort_by_key(|c| c.client);
        v
    }

    /// `c_i` for every base.
    pub fn weights(&self) -> Vec<f64> {
        (0..self.per_base.len()).map(|i| self.sorted(i).iter().map(|c| c.weight).sum()).collect()
    }

    /// Replace each contributed base by the `|D_k|`-weighted mean of its
    /// contributions; bases with `c_i = 0` keep their parameters. Buffers
    /// are averaged too when `with_buffers` is set. Returns `c_i`.
    pub fn finalize(&self, bases: &mut [ModelGraph], with_buffers: bool) -> Result<Vec<f64>> {
        if bases.len() != self.per_base.len() {
            return Err(Error::shape("aggregation bases", &[self.per_base.len()], &[bases.len()]));
        }
        let weights = self.weights();
        for (i, base) in bases.iter_mut().enumerate() {
            let contribs = self.sorted(i);
            if contribs.is_empty() {
                continue;
            }
            let c = weights[i];
            let coef: Vec<f64> = contribs.iter().map(|k| k.weight / c).collect();
            base.set_flat_params(&weighted_mean(contribs.iter().map(|k| &k.params[..]), &coef)?)?;
            if with_buffers {
                base.set_flat_buffers(&weighted_mean(contribs.iter().map(|k| &k.buffers[..]), &coef)?)?;
            }
        }
        Ok(weights)
    }
}

/// `Σ coef_k v_k`, clamped into the per-coordinate range of the inputs.
pub fn weighted_mean<'a>(vs: impl Iterator<Item = &'a [f64]> + Clone, coef: &[f64]) -> Result<Vec<f64>> {
    let mut it = vs.clone();
    let first = it.next().ok_or_else(|| Error::Invalid("weighted mean of nothing".into()))?;
    let n = first.len();
    let mut acc = vec![0.0; n];
    let mut lo = first.to_vec();
    let mut hi = first.to_vec();
    for (v, &w) in vs.zip(coef) {
        if v.len() != n {
            return Err(Error::shape("aggregated vector", &[n], &[v.len()]));
        }
        for j in 0..n {
            acc[j] += w * v[j];
            lo[j] = lo[j].min(v[j]);
            hi[j] = hi[j].max(v[j]);
        }
    }
    for j in 0..n {
        acc[j] = acc[j].clamp(lo[j], hi[j]);
    }
    Ok(acc)
}
