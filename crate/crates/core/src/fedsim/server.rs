use rand::seq::{index, SliceRandom};
use rand::Rng;
use rayon::prelude::*;

use super::aggregate::{AggregationAccumulator, Contribution};
use super::client::ClientSpec;
use super::eval::{evaluate_widths, LocalStats, Split};
use super::schedule::TrainingSchedule;
use super::train::{check_budget, local_train, LocalConfig, LocalRule};
use crate::error::{Error, Result};
use crate::nn::{count_params, post_average_bn, BnMode, BnRoute, ModelGraph};
use crate::rng;
use crate::splitmix::{sort_bases_by_val_acc, BaseModelSet, SamplerState};

/// Append-only log entry for one round.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RoundRecord {
    /// 1-based.
    pub round: usize,
    pub lr: f64,
    pub participants: Vec<usize>,
    pub dropped: Vec<usize>,
    pub failed: Vec<(usize, String)>,
    /// `(client, base positions)` in visit order.
    pub assignments: Vec<(usize, Vec<usize>)>,
    /// `c_i` per base position.
    pub weights: Vec<f64>,
    pub uploaded_params: u64,
    pub downloaded_params: u64,
    /// `(width, validation accuracy)` when evaluated this round.
    pub val_acc: Vec<(f64, f64)>,
}

/// `m` of `k` clients, uniformly without replacement, ascending.
pub fn select_participants(k: usize, m: usize, seed: u64, round: usize) -> Result<Vec<usize>> {
    if m == 0 || m > k {
        return Err(Error::Config(format!("cannot contact {m} of {k} clients")));
    }
    if m == k {
        return Ok((0..k).collect());
    }
    let mut r = rng::stream(seed, &[rng::TAG_PARTICIPANTS, round as u64]);
    let mut v = index::sample(&mut r, k, m).into_vec();
    v.sort_unstable();
    Ok(v)
}

/// Post-training re-estimation of running statistics: every client runs
/// `passes` passes over its training data, and the server averages the
/// per-client moments weighted by `|D_k|`.
pub fn post_average_model(
    model: &mut ModelGraph,
    clients: &[ClientSpec],
    passes: usize,
    batch: usize,
    seed: u64,
) -> Result<()> {
    if model.has_dual_bn() {
        return Err(Error::Config("post_average statistics are not supported with dual batch-norm".into()));
    }
    let parts = clients
        .par_iter()
        .filter(|c| !c.train.is_empty())
        .map(|c| {
            let mut own = model.clone();
            let s = rng::derive(seed, &[rng::TAG_POST_BN, c.id as u64]);
            post_average_bn(&mut own, &c.train.inputs, batch, passes, BnRoute::Clean, s)?;
            Ok((c.train.len() as f64, own.flat_buffers()))
        })
        .collect::<Result<Vec<_>>>()?;
    let total: f64 = parts.iter().map(|p| p.0).sum();
    let coef: Vec<f64> = parts.iter().map(|p| p.0 / total).collect();
    let merged = super::aggregate::weighted_mean(parts.iter().map(|p| &p.1[..]), &coef)?;
    model.set_flat_buffers(&merged)
}

/// [`post_average_model`] for every base.
pub fn post_average_federated(
    set: &mut BaseModelSet,
    clients: &[ClientSpec],
    passes: usize,
    batch: usize,
    seed: u64,
) -> Result<()> {
    for (pos, base) in set.bases.iter_mut().enumerate() {
        post_average_model(base, clients, passes, batch, rng::derive(seed, &[pos as u64]))?;
    }
    Ok(())
}

/// Server state of a Split-Mix run.
#[derive(Clone, Debug)]
pub struct SplitMixServer {
    pub set: BaseModelSet,
    pub sampler: SamplerState,
    pub local_stats: LocalStats,
    pub seed: u64,
    /// Feed finished client tasks to the aggregator in a seeded random
    /// order instead of visit order.
    pub completion_shuffle: bool,
}

struct Job {
    client: usize,
    bases: Vec<usize>,
}

impl SplitMixServer {
    pub fn new(set: BaseModelSet, seed: u64) -> SplitMixServer {
        let sampler = SamplerState::new(set.m(), seed);
        SplitMixServer { set, sampler, local_stats: LocalStats::new(), seed, completion_shuffle: false }
    }

    fn bn_mode(&self) -> BnMode {
        self.set.arch.bn_mode
    }

    /// One round: contact clients, sample bases along the cursor walk, train
    /// locally, aggregate. `round` is 0-based.
    pub fn run_round(
        &mut self,
        clients: &[ClientSpec],
        sched: &TrainingSchedule,
        rule: LocalRule,
        round: usize,
    ) -> Result<RoundRecord> {
        let m = self.set.m();
        let k = clients.len();
        let participants = select_participants(k, sched.participants.unwrap_or(k), self.seed, round)?;
        let mut drop_rng = rng::stream(self.seed, &[rng::TAG_DROPOUT, round as u64]);
        let per_base = count_params(&self.set.bases[0]) as u64;
        let lr = sched.lr_at(round);
        let mut rec = RoundRecord { round: round + 1, lr, participants: participants.clone(), ..Default::default() };
        let mut jobs = Vec::new();
        for &c in &participants {
            let client = &clients[c];
            let n = client.capacity(m).min(m);
            if n == 0 {
                return Err(Error::Config(format!(
                    "client {} budget {} is below the atom width 1/{m}",
                    client.id, client.budget
                )));
            }
            let bases = self.sampler.sample(n)?;
            check_budget(client, bases.len(), m)?;
            rec.downloaded_params += bases.len() as u64 * per_base;
            rec.assignments.push((c, bases.clone()));
            if sched.dropout > 0.0 && drop_rng.random::<f64>() < sched.dropout {
                rec.dropped.push(c);
                continue;
            }
            jobs.push(Job { client: c, bases });
        }
        let local_tracking = self.bn_mode() == BnMode::LocallyTracked;
        let results: Vec<(usize, Result<Vec<ModelGraph>>)> = jobs
            .par_iter()
            .map(|job| {
                let client = &clients[job.client];
                let out = (|| {
                    let objective = client.objective(sched.masked_loss)?;
                    let cfg = LocalConfig {
                        epochs: sched.local_epochs,
                        batch_size: sched.batch_size,
                        lr,
                        momentum: sched.momentum,
                        weight_decay: sched.weight_decay,
                        objective: &objective,
                        rule,
                    };
                    let mut models = job
                        .bases
                        .iter()
                        .map(|&b| {
                            let mut model = self.set.bases[b].clone();
                            if local_tracking {
                                if let Some(buf) = self.local_stats.get(&(client.id, self.set.ids[b])) {
                                    model.set_flat_buffers(buf)?;
                                }
                            }
                            Ok(model)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    local_train(&mut models, &job.bases, client, m, &cfg, self.seed, round)?;
                    Ok(models)
                })();
                (job.client, out)
            })
            .collect();
        let mut finished: Vec<(usize, &[usize], Vec<ModelGraph>)> = Vec::new();
        for ((c, res), job) in results.into_iter().zip(&jobs) {
            match res {
                Ok(models) => finished.push((c, &job.bases, models)),
                Err(e @ Error::Protocol(_)) => return Err(e),
                Err(e) => {
                    log::warn!("round {}: client {c} failed: {e}", round + 1);
                    rec.failed.push((c, e.to_string()));
                }
            }
        }
        if self.completion_shuffle {
            finished.shuffle(&mut rng::stream(self.seed, &[rng::TAG_COMPLETION, round as u64]));
        }
        let mut acc = AggregationAccumulator::new(m);
        for (c, bases, models) in finished {
            let weight = clients[c].train.len() as f64;
            rec.uploaded_params += bases.len() as u64 * per_base;
            for (&b, model) in bases.iter().zip(models) {
                let buffers = model.flat_buffers();
                if local_tracking {
                    self.local_stats.insert((clients[c].id, self.set.ids[b]), buffers.clone());
                }
                acc.add(b, Contribution { client: c, weight, params: model.flat_params(), buffers })?;
            }
        }
        let with_buffers = self.bn_mode().aggregates_running_stats();
        rec.weights = acc.finalize(&mut self.set.bases, with_buffers)?;
        Ok(rec)
    }
}

/// Options of a full Split-Mix run.
#[derive(Clone, Debug)]
pub struct SplitMixOptions {
    pub rule: LocalRule,
    pub seed: u64,
    /// Order bases by validation accuracy after training.
    pub sort: bool,
    pub post_bn_passes: usize,
    pub completion_shuffle: bool,
}

impl Default for SplitMixOptions {
    fn default() -> Self {
        SplitMixOptions { rule: LocalRule::Standard, seed: 0, sort: false, post_bn_passes: 20, completion_shuffle: false }
    }
}

/// Result of a Split-Mix run.
#[derive(Clone, Debug)]
pub struct SplitMixOutcome {
    pub set: BaseModelSet,
    pub records: Vec<RoundRecord>,
    pub local_stats: LocalStats,
}

/// Bases ready for evaluation: post-averaged statistics when the BN mode
/// asks for it.
pub fn finalize_stats(
    set: &BaseModelSet,
    clients: &[ClientSpec],
    sched: &TrainingSchedule,
    opts: &SplitMixOptions,
) -> Result<BaseModelSet> {
    let mut out = set.clone();
    if set.arch.bn_mode == BnMode::PostAverage {
        post_average_federated(&mut out, clients, opts.post_bn_passes, sched.batch_size, opts.seed)?;
    }
    Ok(out)
}

/// Train `set` for `sched.rounds` rounds. Validation accuracy per width is
/// recorded every `eval_every` rounds and at the last round.
pub fn run_splitmix(
    set: BaseModelSet,
    clients: &[ClientSpec],
    sched: &TrainingSchedule,
    opts: &SplitMixOptions,
) -> Result<SplitMixOutcome> {
    sched.validate(clients.len())?;
    let mut server = SplitMixServer::new(set, opts.seed);
    server.completion_shuffle = opts.completion_shuffle;
    let mut records = Vec::with_capacity(sched.rounds);
    for t in 0..sched.rounds {
        let mut rec = server.run_round(clients, sched, opts.rule, t)?;
        if (t + 1) % sched.eval_every == 0 || t + 1 == sched.rounds {
            let ready = finalize_stats(&server.set, clients, sched, opts)?;
            let evals = evaluate_widths(&ready, clients, Split::Val, sched.eval_batch, BnRoute::Clean, &server.local_stats)?;
            rec.val_acc = evals.iter().map(|e| (e.width.as_f64(), e.accuracy())).collect();
        }
        log::info!(
            "round {}/{}: {}",
            t + 1,
            sched.rounds,
            rec.val_acc.iter().map(|(w, a)| format!("x{w}={a:.3}")).collect::<Vec<_>>().join(" ")
        );
        records.push(rec);
    }
    let mut set = finalize_stats(&server.set, clients, sched, opts)?;
    if opts.sort {
        let val: Vec<_> = clients.iter().map(|c| &c.val).collect();
        sort_bases_by_val_acc(&mut set, &val, sched.eval_batch, BnRoute::Clean)?;
    }
    Ok(SplitMixOutcome { set, records, local_stats: server.local_stats })
}
