//! ∞-norm PGD, adversarial training with shared or dual batch-norm, and
//! clean/robust accuracy evaluation under inference-time λ mixing.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::loss::correct;
use crate::nn::{BnRoute, Batch, CrossEntropy, Mode, ModelGraph, Objective, Predictor, Sgd, Tensor, Width};
use crate::rng;
use crate::splitmix::BaseModelSet;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub epsilon: f64,
    pub steps: usize,
    pub step_size: f64,
    pub random_start: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig { epsilon: 8.0 / 255.0, steps: 7, step_size: 2.0 / 255.0, random_start: true }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::Config(format!("attack epsilon {} must be >= 0", self.epsilon)));
        }
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(Error::Config(format!("attack step_size {} must be > 0", self.step_size)));
        }
        if self.steps == 0 {
            return Err(Error::Config("attack steps must be >= 1".into()));
        }
        Ok(())
    }
}

/// Clamp `v` into the ε-ball around `x` intersected with `[0, 1]`, then step
/// toward `x` by ulps until `|v - x| <= eps` holds in floating point.
fn project(v: f64, x: f64, eps: f64) -> f64 {
    let lo = (x - eps).max(0.0);
    let hi = (x + eps).min(1.0);
    let mut p = v.clamp(lo, hi);
    while (p - x).abs() > eps {
        p = if p > x { p.next_down() } else { p.next_up() };
    }
    p
}

/// Hard check that `adv` lies in the ε-ball around `x` and in `[0, 1]`.
pub fn check_feasible(x: &Tensor, adv: &Tensor, eps: f64) -> Result<()> {
    for (i, (&a, &b)) in x.data().iter().zip(adv.data()).enumerate() {
        if (b - a).abs() > eps || !(0.0..=1.0).contains(&b) {
            return Err(Error::Protocol(format!(
                "adversarial coordinate {i} infeasible: x = {a}, x_adv = {b}, eps = {eps}"
            )));
        }
    }
    Ok(())
}

/// Sign-gradient ascent on `objective` with projection after every step.
/// Input gradients are taken in `mode` (phase and BN branch).
pub fn pgd_attack<R: Rng + ?Sized>(
    model: &dyn Predictor,
    x: &Tensor,
    labels: &[usize],
    objective: &dyn Objective,
    cfg: &AttackConfig,
    mode: Mode,
    rng: &mut R,
) -> Result<Tensor> {
    cfg.validate()?;
    if let Some(v) = x.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Invalid(format!("attack input {v} outside [0, 1]")));
    }
    let eps = cfg.epsilon;
    if eps == 0.0 {
        return Ok(x.clone());
    }
    let mut adv = x.clone();
    if cfg.random_start {
        for (a, &x0) in adv.data_mut().iter_mut().zip(x.data()) {
            *a = project(x0 + rng.random_range(-eps..=eps), x0, eps);
        }
    }
    for _ in 0..cfg.steps {
        let (_, g) = model.input_gradient(&adv, labels, objective, mode)?;
        for ((a, &x0), &gi) in adv.data_mut().iter_mut().zip(x.data()).zip(g.data()) {
            let s = if gi > 0.0 {
                1.0
            } else if gi < 0.0 {
                -1.0
            } else {
                0.0
            };
            *a = project(*a + cfg.step_size * s, x0, eps);
        }
    }
    check_feasible(x, &adv, eps)?;
    Ok(adv)
}

/// How a model is trained against adversarial inputs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdvTraining {
    pub attack: AttackConfig,
    /// Weight of the adversarial term.
    pub lambda_n: f64,
    /// Route clean samples through `BN_c` and adversarial ones through `BN_n`.
    pub dual_bn: bool,
}

impl AdvTraining {
    /// The dual-BN rule: λ_n fixed at 0.5.
    pub fn dual(attack: AttackConfig) -> AdvTraining {
        AdvTraining { attack, lambda_n: 0.5, dual_bn: true }
    }

    pub fn validate(&self) -> Result<()> {
        self.attack.validate()?;
        if !(0.0..=1.0).contains(&self.lambda_n) {
            return Err(Error::Config(format!("lambda_n {} outside [0, 1]", self.lambda_n)));
        }
        if self.dual_bn && self.lambda_n != 0.5 {
            return Err(Error::Config("lambda_n is fixed to 0.5 with dual batch-norm".into()));
        }
        Ok(())
    }

    fn routes(&self) -> (BnRoute, BnRoute) {
        if self.dual_bn {
            (BnRoute::Clean, BnRoute::Noised)
        } else {
            (BnRoute::Clean, BnRoute::Clean)
        }
    }
}

/// `(1 - λ_n) CE(f(x)) + λ_n CE(f(x + δ))` in the training phase, without
/// touching statistics or parameters.
pub fn at_loss<R: Rng + ?Sized>(
    model: &ModelGraph,
    batch: &Batch,
    objective: &dyn Objective,
    rule: &AdvTraining,
    rng: &mut R,
) -> Result<f64> {
    rule.validate()?;
    let (clean_route, adv_route) = rule.routes();
    let clean_mode = Mode::train().frozen().with_route(clean_route);
    let adv_mode = Mode::train().frozen().with_route(adv_route);
    let lc = objective.loss_grad(&model.forward(&batch.inputs, clean_mode)?.0, &batch.labels)?.0;
    let adv = pgd_attack(model, &batch.inputs, &batch.labels, objective, &rule.attack, adv_mode, rng)?;
    let la = objective.loss_grad(&model.forward(&adv, adv_mode)?.0, &batch.labels)?.0;
    Ok((1.0 - rule.lambda_n) * lc + rule.lambda_n * la)
}

/// One adversarial-training SGD step: perturb under the adversarial branch,
/// take the clean loss (clean branch) and the adversarial loss (adversarial
/// branch), combine them with λ_n and step once. Returns the combined loss.
pub fn adversarial_step<R: Rng + ?Sized>(
    model: &mut ModelGraph,
    sgd: &mut Sgd,
    batch: &Batch,
    objective: &dyn Objective,
    rule: &AdvTraining,
    lr: f64,
    rng: &mut R,
) -> Result<f64> {
    rule.validate()?;
    if rule.dual_bn && !model.has_dual_bn() {
        return Err(Error::Config("dual batch-norm training needs a model built with dual_bn".into()));
    }
    let (clean_route, adv_route) = rule.routes();
    let lam = rule.lambda_n;
    let mut loss = 0.0;
    let mut grads: Option<Vec<Tensor>> = None;
    let add = |g: Vec<Tensor>, w: f64, grads: &mut Option<Vec<Tensor>>| match grads {
        None => {
            *grads = Some(g.into_iter().map(|mut t| {
                t.scale(w);
                t
            }).collect())
        }
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, t)| a.axpy(w, t)),
    };
    if lam < 1.0 {
        let (lc, gc, _) = model.loss_and_grads(batch, objective, Mode::train().with_route(clean_route))?;
        loss += (1.0 - lam) * lc;
        add(gc, 1.0 - lam, &mut grads);
    }
    if lam > 0.0 {
        let adv_mode = Mode::train().frozen().with_route(adv_route);
        let adv = pgd_attack(&*model, &batch.inputs, &batch.labels, objective, &rule.attack, adv_mode, rng)?;
        let adv_batch = Batch { inputs: adv, labels: batch.labels.clone() };
        let (la, ga, _) = model.loss_and_grads(&adv_batch, objective, Mode::train().with_route(adv_route))?;
        loss += lam * la;
        add(ga, lam, &mut grads);
    }
    sgd.step(model.params_mut(), &grads.expect("at least one loss term"), lr)?;
    Ok(loss)
}

/// Clean and robust accuracy of `model` at mixing weight `lambda`. Each
/// dataset counts as one user; the result is the unweighted mean over users.
/// Adversarial examples are generated against the λ-mixed model.
pub fn evaluate_ra_sa(
    model: &dyn Predictor,
    users: &[&LabeledDataset],
    attack: &AttackConfig,
    lambda: f64,
    batch_size: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let route = BnRoute::Mix(lambda).validate()?;
    let mode = Mode::eval().with_route(route);
    let ce = CrossEntropy::new();
    let mut sa = 0.0;
    let mut ra = 0.0;
    let mut counted = 0usize;
    for (u, d) in users.iter().enumerate() {
        if d.is_empty() {
            continue;
        }
        let mut r = rng::stream(seed, &[rng::TAG_ATTACK, u as u64]);
        let (mut c_clean, mut c_adv) = (0, 0);
        for b in d.batches(batch_size) {
            c_clean += correct(&model.logits(&b.inputs, mode)?, &b.labels);
            let adv = pgd_attack(model, &b.inputs, &b.labels, &ce, attack, mode, &mut r)?;
            c_adv += correct(&model.logits(&adv, mode)?, &b.labels);
        }
        sa += c_clean as f64 / d.len() as f64;
        ra += c_adv as f64 / d.len() as f64;
        counted += 1;
    }
    if counted == 0 {
        return Err(crate::error::DataError::Empty.into());
    }
    Ok((sa / counted as f64, ra / counted as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TradeoffPoint {
    pub width: f64,
    pub lambda: f64,
    pub sa: f64,
    pub ra: f64,
}

/// One (SA, RA) point per (width, λ).
pub fn tradeoff_sweep(
    set: &BaseModelSet,
    widths: &[Width],
    lambdas: &[f64],
    users: &[&LabeledDataset],
    attack: &AttackConfig,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<TradeoffPoint>> {
    let mut out = Vec::with_capacity(widths.len() * lambdas.len());
    for &w in widths {
        let mixed = set.customize(w)?;
        for &lambda in lambdas {
            let (sa, ra) = evaluate_ra_sa(&mixed, users, attack, lambda, batch_size, seed)?;
            out.push(TradeoffPoint { width: w.as_f64(), lambda, sa, ra });
        }
    }
    Ok(out)
}
