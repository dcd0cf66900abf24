use std::borrow::Cow;
use std::collections::BTreeMap;

use super::client::ClientSpec;
use crate::data::LabeledDataset;
use crate::error::Result;
use crate::nn::loss::correct;
use crate::nn::{BnRoute, Mode, ModelGraph, Tensor, Width};
use crate::splitmix::BaseModelSet;

/// Which client shard to score.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

pub fn split_data(c: &ClientSpec, split: Split) -> Option<&LabeledDataset> {
    match split {
        Split::Train => Some(&c.train),
        Split::Val => Some(&c.val),
        Split::Test => c.test.as_ref(),
    }
    .filter(|d| !d.is_empty())
}

/// Client-local running statistics, keyed by (client id, base id).
pub type LocalStats = BTreeMap<(usize, usize), Vec<f64>>;

/// Accuracy of one customized width, with per-client counts.
#[derive(Clone, Debug, PartialEq)]
pub struct WidthAccuracy {
    pub width: Width,
    /// `(client id, correct, total)`.
    pub per_client: Vec<(usize, usize, usize)>,
}

impl WidthAccuracy {
    /// Sample-weighted accuracy over all scored clients.
    pub fn accuracy(&self) -> f64 {
        let (c, n) = self.per_client.iter().fold((0, 0), |(a, b), &(_, c, n)| (a + c, b + n));
        if n == 0 {
            0.0
        } else {
            c as f64 / n as f64
        }
    }

    /// Unweighted mean of per-client accuracies.
    pub fn client_mean(&self) -> f64 {
        let scored: Vec<f64> = self
            .per_client
            .iter()
            .filter(|x| x.2 > 0)
            .map(|&(_, c, n)| c as f64 / n as f64)
            .collect();
        if scored.is_empty() {
            0.0
        } else {
            scored.iter().sum::<f64>() / scored.len() as f64
        }
    }
}

/// The bases as client `client` sees them: local running statistics
/// substituted where it has them.
pub fn client_view<'a>(set: &'a BaseModelSet, client: usize, local: &LocalStats) -> Result<Vec<Cow<'a, ModelGraph>>> {
    set.bases
        .iter()
        .zip(&set.ids)
        .map(|(b, id)| match local.get(&(client, *id)) {
            Some(buf) => {
                let mut own = b.clone();
                own.set_flat_buffers(buf)?;
                Ok(Cow::Owned(own))
            }
            None => Ok(Cow::Borrowed(b)),
        })
        .collect()
}

/// Correct counts of every prefix mixture `1..=models.len()` on `data`.
pub fn prefix_correct(models: &[&ModelGraph], data: &LabeledDataset, batch: usize, route: BnRoute) -> Result<Vec<usize>> {
    let mode = Mode::eval().with_route(route);
    let mut counts = vec![0; models.len()];
    for b in data.batches(batch) {
        let mut sum: Option<Tensor> = None;
        for (k, m) in models.iter().enumerate() {
            let y = m.forward(&b.inputs, mode)?.0;
            match &mut sum {
                None => sum = Some(y),
                Some(s) => s.axpy(1.0, &y),
            }
            let mut mean = sum.clone().expect("set above");
            mean.scale(1.0 / (k + 1) as f64);
            counts[k] += correct(&mean, &b.labels);
        }
    }
    Ok(counts)
}

/// Accuracy of every width `r, 2r, ..., 1` on the chosen split.
pub fn evaluate_widths(
    set: &BaseModelSet,
    clients: &[ClientSpec],
    split: Split,
    batch: usize,
    route: BnRoute,
    local: &LocalStats,
) -> Result<Vec<WidthAccuracy>> {
    let mut out: Vec<WidthAccuracy> =
        set.widths().into_iter().map(|width| WidthAccuracy { width, per_client: Vec::new() }).collect();
    for c in clients {
        let Some(data) = split_data(c, split) else { continue };
        let view = client_view(set, c.id, local)?;
        let refs: Vec<&ModelGraph> = view.iter().map(|m| m.as_ref()).collect();
        for (k, n) in prefix_correct(&refs, data, batch, route)?.into_iter().enumerate() {
            out[k].per_client.push((c.id, n, data.len()));
        }
    }
    Ok(out)
}

/// Accuracy of a single model on the chosen split.
pub fn evaluate_model(
    model: &ModelGraph,
    width: Width,
    clients: &[ClientSpec],
    split: Split,
    batch: usize,
    route: BnRoute,
) -> Result<WidthAccuracy> {
    let mut out = WidthAccuracy { width, per_client: Vec::new() };
    for c in clients {
        if let Some(data) = split_data(c, split) {
            let n = prefix_correct(&[model], data, batch, route)?[0];
            out.per_client.push((c.id, n, data.len()));
        }
    }
    Ok(out)
}
