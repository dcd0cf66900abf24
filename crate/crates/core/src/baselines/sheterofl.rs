use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use super::slimmable::SlimmableModel;
use crate::error::{Error, Result};
use crate::fedsim::aggregate::weighted_mean;
use crate::fedsim::eval::{evaluate_model, Split, WidthAccuracy};
use crate::fedsim::train::local_stream;
use crate::fedsim::{post_average_model, select_participants, ClientSpec, LocalConfig, LocalRule, RoundRecord, TrainingSchedule};
use crate::nn::{ArchSpec, BnMode, BnRoute, Mode, Sgd, Width};
use crate::rng;

/// A client's locally trained slimmable model.
#[derive(Clone, Debug)]
pub struct SlimUpdate {
    pub client: usize,
    pub weight: f64,
    /// Widest prototype trained; bounds the region of `full` that changed.
    pub width: Width,
    pub model: SlimmableModel,
}

/// Train every prototype no wider than the client's budget. Per batch the
/// prototypes run smallest first, each stepping its own optimizer on the
/// shared tensors before the next one slices them.
pub fn sheterofl_local_train(
    global: &SlimmableModel,
    client: &ClientSpec,
    cfg: &LocalConfig,
    seed: u64,
    round: usize,
) -> Result<SlimUpdate> {
    if cfg.rule != LocalRule::Standard {
        return Err(Error::Config("SHeteroFL supports standard training only".into()));
    }
    let widths: Vec<Width> = global.widths().into_iter().filter(|&w| w <= client.budget).collect();
    let Some(&widest) = widths.last() else {
        return Err(Error::Config(format!(
            "client {} budget {} is below every slimmable width",
            client.id, client.budget
        )));
    };
    if widest > client.budget {
        return Err(Error::Protocol(format!("client {} would train ×{widest} over budget {}", client.id, client.budget)));
    }
    let mut local = global.clone();
    let mut sgds: Vec<Sgd> = widths.iter().map(|_| Sgd::new(cfg.momentum, cfg.weight_decay)).collect();
    let mut r = local_stream(seed, round, client.id, 0);
    for _ in 0..cfg.epochs {
        for batch in client.train.shuffled_batches(cfg.batch_size, &mut r) {
            for (&w, sgd) in widths.iter().zip(&mut sgds) {
                let mut sub = local.slice_subnet(w)?;
                let (_, grads, _) = sub.loss_and_grads(&batch, cfg.objective, Mode::train())?;
                sgd.step(sub.params_mut(), &grads, cfg.lr)?;
                local.write_back(w, &sub)?;
            }
        }
    }
    Ok(SlimUpdate { client: client.id, weight: client.train.len() as f64, width: widest, model: local })
}

/// Coverage-weighted averaging: every coordinate of the shared tensors is
/// the `|D_k|`-weighted mean over the clients whose trained region covers
/// it; uncovered coordinates keep their value. Each width's batch-norm is
/// averaged over the clients that trained that width.
pub fn sheterofl_aggregate(global: &mut SlimmableModel, updates: &[SlimUpdate], with_buffers: bool) -> Result<()> {
    let mut ups: Vec<&SlimUpdate> = updates.iter().collect();
    ups.sort_by_key(|u| u.client);
    let regions: Vec<Vec<Vec<usize>>> = ups
        .iter()
        .map(|u| {
            let proto = global.protos.get(&u.width).ok_or_else(|| Error::Invalid(format!("unknown width {}", u.width)))?;
            Ok(proto.params().iter().map(|p| p.shape().to_vec()).collect())
        })
        .collect::<Result<_>>()?;
    let locals: Vec<Vec<&crate::nn::Tensor>> = ups.iter().map(|u| u.model.full.params()).collect();
    for (t, target) in global.full.params_mut().into_iter().enumerate() {
        let n = target.len();
        let mut num = vec![0.0; n];
        let mut den = vec![0.0; n];
        let mut lo = vec![f64::INFINITY; n];
        let mut hi = vec![f64::NEG_INFINITY; n];
        for (u, (local, region)) in ups.iter().zip(locals.iter().zip(&regions)) {
            let src = local[t].data();
            crate::nn::tensor::for_each_leading(target.shape(), &region[t], |i, _| {
                num[i] += u.weight * src[i];
                den[i] += u.weight;
                lo[i] = lo[i].min(src[i]);
                hi[i] = hi[i].max(src[i]);
            });
        }
        for (i, v) in target.data_mut().iter_mut().enumerate() {
            if den[i] > 0.0 {
                *v = (num[i] / den[i]).clamp(lo[i], hi[i]);
            }
        }
    }
    for w in global.widths() {
        let holders: Vec<&SlimUpdate> = ups.iter().copied().filter(|u| w <= u.width).collect();
        if holders.is_empty() {
            continue;
        }
        let total: f64 = holders.iter().map(|u| u.weight).sum();
        let coef: Vec<f64> = holders.iter().map(|u| u.weight / total).collect();
        let params: Vec<Vec<f64>> = holders.iter().map(|u| u.model.protos[&w].flat_params()).collect();
        let proto = global.protos.get_mut(&w).expect("width from the set");
        proto.set_flat_params(&weighted_mean(params.iter().map(|p| &p[..]), &coef)?)?;
        if with_buffers {
            let bufs: Vec<Vec<f64>> = holders.iter().map(|u| u.model.protos[&w].flat_buffers()).collect();
            proto.set_flat_buffers(&weighted_mean(bufs.iter().map(|b| &b[..]), &coef)?)?;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, Default)]
pub struct SHeteroOptions {
    pub seed: u64,
    pub post_bn_passes: usize,
    pub completion_shuffle: bool,
}

#[derive(Clone, Debug)]
pub struct SHeteroOutcome {
    pub model: SlimmableModel,
    pub records: Vec<RoundRecord>,
}

impl SHeteroOutcome {
    /// Accuracy per width on `split`, with post-averaged statistics when
    /// the BN mode asks for it.
    pub fn evaluate(
        &self,
        clients: &[ClientSpec],
        split: Split,
        sched: &TrainingSchedule,
        opts: &SHeteroOptions,
    ) -> Result<Vec<WidthAccuracy>> {
        evaluate_slimmable(&self.model, clients, split, sched, opts)
    }
}

fn evaluate_slimmable(
    model: &SlimmableModel,
    clients: &[ClientSpec],
    split: Split,
    sched: &TrainingSchedule,
    opts: &SHeteroOptions,
) -> Result<Vec<WidthAccuracy>> {
    model
        .widths()
        .into_iter()
        .map(|w| {
            let mut sub = model.slice_subnet(w)?;
            if model.arch.bn_mode == BnMode::PostAverage {
                post_average_model(&mut sub, clients, opts.post_bn_passes, sched.batch_size, opts.seed)?;
            }
            evaluate_model(&sub, w, clients, split, sched.eval_batch, BnRoute::Clean)
        })
        .collect()
}

/// SHeteroFL over `widths`.
pub fn run_sheterofl(
    arch: &ArchSpec,
    widths: &[Width],
    clients: &[ClientSpec],
    sched: &TrainingSchedule,
    opts: &SHeteroOptions,
) -> Result<SHeteroOutcome> {
    sched.validate(clients.len())?;
    if arch.dual_bn {
        return Err(Error::Config("SHeteroFL does not support dual batch-norm".into()));
    }
    if arch.bn_mode == BnMode::LocallyTracked {
        return Err(Error::Config("SHeteroFL does not support locally_tracked statistics".into()));
    }
    let mut model = SlimmableModel::new(arch, widths, rng::derive(opts.seed, &[rng::TAG_INIT]))?;
    let with_buffers = arch.bn_mode.aggregates_running_stats();
    let mut records = Vec::with_capacity(sched.rounds);
    for t in 0..sched.rounds {
        let k = clients.len();
        let participants = select_participants(k, sched.participants.unwrap_or(k), opts.seed, t)?;
        let mut drop_rng = rng::stream(opts.seed, &[rng::TAG_DROPOUT, t as u64]);
        let lr = sched.lr_at(t);
        let mut rec = RoundRecord { round: t + 1, lr, participants: participants.clone(), ..Default::default() };
        let mut active = Vec::new();
        for &c in &participants {
            let trained: Vec<usize> = (0..widths.len()).filter(|&i| model.widths()[i] <= clients[c].budget).collect();
            let widest = trained.last().map(|&i| model.widths()[i]);
            rec.downloaded_params += widest.map_or(Ok(0), |w| model.params_at(w))? as u64;
            rec.assignments.push((c, trained));
            if sched.dropout > 0.0 && drop_rng.random::<f64>() < sched.dropout {
                rec.dropped.push(c);
                continue;
            }
            active.push(c);
        }
        let results: Vec<(usize, Result<SlimUpdate>)> = active
            .par_iter()
            .map(|&c| {
                let client = &clients[c];
                let out = (|| {
                    let objective = client.objective(sched.masked_loss)?;
                    let cfg = LocalConfig {
                        epochs: sched.local_epochs,
                        batch_size: sched.batch_size,
                        lr,
                        momentum: sched.momentum,
                        weight_decay: sched.weight_decay,
                        objective: &objective,
                        rule: LocalRule::Standard,
                    };
                    sheterofl_local_train(&model, client, &cfg, opts.seed, t)
                })();
                (c, out)
            })
            .collect();
        let mut updates = Vec::new();
        for (c, res) in results {
            match res {
                Ok(u) => updates.push(u),
                Err(e @ (Error::Protocol(_) | Error::Config(_))) => return Err(e),
                Err(e) => {
                    log::warn!("round {}: client {c} failed: {e}", t + 1);
                    rec.failed.push((c, e.to_string()));
                }
            }
        }
        if opts.completion_shuffle {
            updates.shuffle(&mut rng::stream(opts.seed, &[rng::TAG_COMPLETION, t as u64]));
        }
        for u in &updates {
            rec.uploaded_params += model.params_at(u.width)? as u64;
        }
        sheterofl_aggregate(&mut model, &updates, with_buffers)?;
        if (t + 1) % sched.eval_every == 0 || t + 1 == sched.rounds {
            let evals = evaluate_slimmable(&model, clients, Split::Val, sched, opts)?;
            rec.val_acc = evals.iter().map(|e| (e.width.as_f64(), e.accuracy())).collect();
        }
        records.push(rec);
    }
    Ok(SHeteroOutcome { model, records })
}
