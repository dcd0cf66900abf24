use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::client::ClientSpec;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{Mode, ModelGraph, Objective, Sgd};
use crate::rng;
use crate::robustness::{adversarial_step, AdvTraining};

/// Local update rule.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum LocalRule {
    #[default]
    Standard,
    Adversarial(AdvTraining),
}

/// Hyper-parameters of one local training call.
#[derive(Clone, Copy)]
pub struct LocalConfig<'a> {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub objective: &'a dyn Objective,
    pub rule: LocalRule,
}

/// `epochs` passes of mini-batch SGD over `data` with a fresh optimizer.
/// Returns the mean batch loss (0 when nothing ran).
pub fn train_model(model: &mut ModelGraph, data: &LabeledDataset, cfg: &LocalConfig, rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut sgd = Sgd::new(cfg.momentum, cfg.weight_decay);
    let mut total = 0.0;
    let mut steps = 0usize;
    for _ in 0..cfg.epochs {
        for batch in data.shuffled_batches(cfg.batch_size, rng) {
            let loss = match &cfg.rule {
                LocalRule::Standard => {
                    let (loss, grads, _) = model.loss_and_grads(&batch, cfg.objective, Mode::train())?;
                    sgd.step(model.params_mut(), &grads, cfg.lr)?;
                    loss
                }
                LocalRule::Adversarial(rule) => adversarial_step(model, &mut sgd, &batch, cfg.objective, rule, cfg.lr, rng)?,
            };
            total += loss;
            steps += 1;
        }
    }
    Ok(if steps == 0 { 0.0 } else { total / steps as f64 })
}

/// Seed of the local stream for (`round`, `client`, `base`).
pub fn local_stream(seed: u64, round: usize, client: usize, base: usize) -> ChaCha8Rng {
    rng::stream(seed, &[rng::TAG_LOCAL, round as u64, client as u64, base as u64])
}

/// Train each assigned base independently on the client's data. `models[j]`
/// is a copy of base `base_ids[j]`. Fails with a protocol error when the
/// client holds more bases than its budget allows.
pub fn local_train(
    models: &mut [ModelGraph],
    base_ids: &[usize],
    client: &ClientSpec,
    m: usize,
    cfg: &LocalConfig,
    seed: u64,
    round: usize,
) -> Result<()> {
    check_budget(client, base_ids.len(), m)?;
    if models.len() != base_ids.len() {
        return Err(Error::shape("local models", &[base_ids.len()], &[models.len()]));
    }
    if let LocalRule::Adversarial(r) = &cfg.rule {
        if r.dual_bn && models.iter().any(|x| !x.has_dual_bn()) {
            return Err(Error::Config("dual batch-norm training needs models built with dual_bn".into()));
        }
    }
    models.par_iter_mut().zip(base_ids.par_iter()).try_for_each(|(model, &b)| {
        let mut r = local_stream(seed, round, client.id, b);
        train_model(model, &client.train, cfg, &mut r).map(|_| ())
    })
}

/// The core constraint: at most `⌊R_k / r⌋` bases per client.
pub fn check_budget(client: &ClientSpec, assigned: usize, m: usize) -> Result<()> {
    let cap = client.capacity(m);
    if assigned > cap {
        return Err(Error::Protocol(format!(
            "client {} assigned {assigned} bases but budget {} allows {cap}",
            client.id, client.budget
        )));
    }
    Ok(())
}
