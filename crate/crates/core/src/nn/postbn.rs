use rand::seq::SliceRandom;

use super::batchnorm::{BatchNorm, BnRoute};
use super::model::{Layer, Mode, ModelGraph};
use super::tensor::Tensor;
use crate::error::{DataError, Result};
use crate::rng;

#[derive(Clone)]
struct Moments {
    sum: Vec<f64>,
    sumsq: Vec<f64>,
    count: f64,
}

/// Re-estimate running statistics over `passes` shuffled passes of `inputs`
/// while normalizing with mini-batch statistics. Weights are untouched; the
/// resulting running mean/variance are the exact moments of every
/// batch-norm input seen across all passes.
pub fn post_average_bn(
    model: &mut ModelGraph,
    inputs: &Tensor,
    batch_size: usize,
    passes: usize,
    route: BnRoute,
    seed: u64,
) -> Result<()> {
    let n = inputs.batch();
    if n == 0 || passes == 0 {
        return Err(DataError::Empty.into());
    }
    let batch_size = batch_size.max(1);
    let mut acc: Vec<Moments> = Vec::new();
    let mut order: Vec<usize> = (0..n).collect();
    let mut r = rng::stream(seed, &[rng::TAG_POST_BN]);
    let mode = Mode::train().frozen().with_route(route);
    for _ in 0..passes {
        order.shuffle(&mut r);
        for chunk in order.chunks(batch_size) {
            let x = inputs.gather_rows(chunk);
            let (_, tape) = model.forward(&x, mode)?;
            let caches = tape.bn_caches();
            if acc.is_empty() {
                acc = caches
                    .iter()
                    .map(|c| Moments {
                        sum: vec![0.0; c.mean.len()],
                        sumsq: vec![0.0; c.mean.len()],
                        count: 0.0,
                    })
                    .collect();
            }
            for (m, c) in acc.iter_mut().zip(caches) {
                let cnt = c.count as f64;
                for ((s, q), (&mu, &var)) in m.sum.iter_mut().zip(&mut m.sumsq).zip(c.mean.iter().zip(&c.var)) {
                    *s += mu * cnt;
                    *q += (var + mu * mu) * cnt;
                }
                m.count += cnt;
            }
        }
    }
    let mut it = acc.into_iter();
    let mut assign = |bn: &mut BatchNorm| {
        if let Some(m) = it.next() {
            for ((rm, rv), (s, q)) in bn
                .running_mean
                .data_mut()
                .iter_mut()
                .zip(bn.running_var.data_mut())
                .zip(m.sum.iter().zip(&m.sumsq))
            {
                let mean = s / m.count;
                *rm = mean;
                *rv = (q / m.count - mean * mean).max(0.0);
            }
        }
    };
    for layer in &mut model.layers {
        match layer {
            Layer::BatchNorm(b) => assign(b),
            Layer::DualBn(d) => match route {
                BnRoute::Clean => assign(&mut d.clean),
                BnRoute::Noised => assign(&mut d.noised),
                BnRoute::Mix(_) => {
                    assign(&mut d.clean);
                    assign(&mut d.noised);
                }
            },
            _ => {}
        }
    }
    Ok(())
}
