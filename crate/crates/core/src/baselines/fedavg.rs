use rand::Rng;

use crate::error::{Error, Result};
use crate::fedsim::aggregate::weighted_mean;
use crate::fedsim::train::{local_stream, train_model};
use crate::fedsim::{post_average_model, select_participants, ClientSpec, LocalConfig, LocalRule, RoundRecord, TrainingSchedule};
use crate::fedsim::eval::{evaluate_model, Split};
use crate::nn::{count_params, ArchSpec, BnMode, BnRoute, ModelGraph, Width};
use crate::rng;

#[derive(Clone, Debug, Default)]
pub struct FedAvgOptions {
    pub seed: u64,
    pub rule: LocalRule,
    /// Train clients whose budget is below the width anyway, logging the
    /// violation (an upper bound, not a budget-compatible baseline).
    pub upper_bound: bool,
    pub post_bn_passes: usize,
}

#[derive(Clone, Debug)]
pub struct FedAvgOutcome {
    pub model: ModelGraph,
    pub records: Vec<RoundRecord>,
    /// `(round, client)` pairs trained over budget.
    pub violations: Vec<(usize, usize)>,
}

/// Plain FedAvg on a single ×`width` model.
pub fn fedavg_individual(
    arch: &ArchSpec,
    width: Width,
    clients: &[ClientSpec],
    sched: &TrainingSchedule,
    opts: &FedAvgOptions,
) -> Result<FedAvgOutcome> {
    sched.validate(clients.len())?;
    if !opts.upper_bound {
        if let Some(c) = clients.iter().find(|c| width > c.budget) {
            return Err(Error::Config(format!(
                "×{width} exceeds client {} budget {}; enable upper_bound to train it anyway",
                c.id, c.budget
            )));
        }
    }
    let mut model = ModelGraph::build(arch, width, rng::derive(opts.seed, &[rng::TAG_INIT, 0]))?;
    let per_model = count_params(&model) as u64;
    let with_buffers = arch.bn_mode.aggregates_running_stats();
    let mut records = Vec::with_capacity(sched.rounds);
    let mut violations = Vec::new();
    for t in 0..sched.rounds {
        let k = clients.len();
        let participants = select_participants(k, sched.participants.unwrap_or(k), opts.seed, t)?;
        let mut drop_rng = rng::stream(opts.seed, &[rng::TAG_DROPOUT, t as u64]);
        let lr = sched.lr_at(t);
        let mut rec = RoundRecord { round: t + 1, lr, participants: participants.clone(), ..Default::default() };
        let mut trained: Vec<(usize, ModelGraph)> = Vec::new();
        for &c in &participants {
            let client = &clients[c];
            if width > client.budget {
                log::warn!("round {}: ×{width} trained on client {c} with budget {}", t + 1, client.budget);
                violations.push((t + 1, c));
            }
            rec.assignments.push((c, vec![0]));
            rec.downloaded_params += per_model;
            if sched.dropout > 0.0 && drop_rng.random::<f64>() < sched.dropout {
                rec.dropped.push(c);
                continue;
            }
            let objective = client.objective(sched.masked_loss)?;
            let cfg = LocalConfig {
                epochs: sched.local_epochs,
                batch_size: sched.batch_size,
                lr,
                momentum: sched.momentum,
                weight_decay: sched.weight_decay,
                objective: &objective,
                rule: opts.rule,
            };
            let mut local = model.clone();
            match train_model(&mut local, &client.train, &cfg, &mut local_stream(opts.seed, t, client.id, 0)) {
                Ok(_) => {
                    rec.uploaded_params += per_model;
                    trained.push((c, local));
                }
                Err(e) => {
                    log::warn!("round {}: client {c} failed: {e}", t + 1);
                    rec.failed.push((c, e.to_string()));
                }
            }
        }
        if !trained.is_empty() {
            let total: f64 = trained.iter().map(|(c, _)| clients[*c].train.len() as f64).sum();
            let coef: Vec<f64> = trained.iter().map(|(c, _)| clients[*c].train.len() as f64 / total).collect();
            let params: Vec<Vec<f64>> = trained.iter().map(|(_, m)| m.flat_params()).collect();
            model.set_flat_params(&weighted_mean(params.iter().map(|p| &p[..]), &coef)?)?;
            if with_buffers {
                let bufs: Vec<Vec<f64>> = trained.iter().map(|(_, m)| m.flat_buffers()).collect();
                model.set_flat_buffers(&weighted_mean(bufs.iter().map(|b| &b[..]), &coef)?)?;
            }
            rec.weights = vec![total];
        } else {
            rec.weights = vec![0.0];
        }
        if (t + 1) % sched.eval_every == 0 || t + 1 == sched.rounds {
            let ready = finalize(&model, clients, sched, opts)?;
            let acc = evaluate_model(&ready, width, clients, Split::Val, sched.eval_batch, BnRoute::Clean)?.accuracy();
            rec.val_acc = vec![(width.as_f64(), acc)];
        }
        records.push(rec);
    }
    let model = finalize(&model, clients, sched, opts)?;
    Ok(FedAvgOutcome { model, records, violations })
}

fn finalize(model: &ModelGraph, clients: &[ClientSpec], sched: &TrainingSchedule, opts: &FedAvgOptions) -> Result<ModelGraph> {
    let mut out = model.clone();
    if model.arch.bn_mode == BnMode::PostAverage {
        post_average_model(&mut out, clients, opts.post_bn_passes, sched.batch_size, rng::derive(opts.seed, &[0]))?;
    }
    Ok(out)
}
