//! Experiment orchestration: data preparation, method runs and result rows.

use log::{info, warn};
use serde::Serialize;

use super::config::{BaselineKind, DatasetConfig, ExperimentConfig, PartitionKind};
use crate::baselines::{fedavg_individual, run_sheterofl, FedAvgOptions, SHeteroOptions};
use crate::data::{
    class_noniid_partition, feature_noniid_partition, iid_partition, load_dataset, spread_clients, synth_multidomain,
    LabeledDataset,
};
use crate::error::{Error, Result};
use crate::fedsim::eval::{evaluate_model, evaluate_widths, Split};
use crate::fedsim::{assign_budgets, build_clients, run_splitmix, ClientSpec, LocalRule, RoundRecord, SplitMixOptions};
use crate::nn::{count_macs, count_params, ArchSpec, BnMode, BnRoute, Width};
use crate::rng;
use crate::robustness::{tradeoff_sweep, AdvTraining, TradeoffPoint};
use crate::splitmix::{build_base_models, BaseModelSet};

/// Clients and architecture derived from a config.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub clients: Vec<ClientSpec>,
    pub arch: ArchSpec,
    pub m: usize,
}

fn partition(
    cfg: &ExperimentConfig,
    train_domains: Vec<LabeledDataset>,
    test_domains: Vec<LabeledDataset>,
) -> Result<(Vec<LabeledDataset>, Vec<LabeledDataset>)> {
    let p = &cfg.partitioner;
    let seed = cfg.seed;
    let test_seed = rng::derive(seed, &[1]);
    match p.kind {
        PartitionKind::FeatureNoniid => {
            let cpd = p.clients_per_domain.clone().unwrap_or_else(|| spread_clients(p.clients, train_domains.len()));
            if cpd.len() != train_domains.len() {
                return Err(Error::Config(format!(
                    "partitioner.clients_per_domain has {} entries for {} domains",
                    cpd.len(),
                    train_domains.len()
                )));
            }
            Ok((
                feature_noniid_partition(&train_domains, &cpd, seed)?,
                feature_noniid_partition(&test_domains, &cpd, test_seed)?,
            ))
        }
        PartitionKind::ClassNoniid | PartitionKind::Iid => {
            let train = LabeledDataset::concat(&train_domains.iter().collect::<Vec<_>>())?;
            let test = LabeledDataset::concat(&test_domains.iter().collect::<Vec<_>>())?;
            if p.kind == PartitionKind::Iid {
                Ok((iid_partition(&train, p.clients, seed)?, iid_partition(&test, p.clients, test_seed)?))
            } else {
                // Same seed so each client's test shard covers its training classes.
                Ok((
                    class_noniid_partition(&train, p.clients, p.classes_per_client, seed)?,
                    class_noniid_partition(&test, p.clients, p.classes_per_client, seed)?,
                ))
            }
        }
    }
}

/// Build the client population: load or generate data, partition it, split
/// validation shards and assign budgets.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let m = cfg.m()?;
    let (train_domains, test_domains) = match &cfg.dataset {
        DatasetConfig::Synthetic { synth } => {
            let data = synth_multidomain(synth, cfg.seed)?;
            data.domains.into_iter().unzip()
        }
        DatasetConfig::File { format, train, train_labels, test, test_labels, classes, test_fraction } => {
            let mut full = load_dataset(*format, train, train_labels.as_deref(), *classes)?;
            full.domain = Some(0);
            let (tr, mut te) = match test {
                Some(t) => (full, load_dataset(*format, t, test_labels.as_deref(), Some(full_classes(classes)?))?),
                None => full.split_validation(*test_fraction, &mut rng::stream(cfg.seed, &[rng::TAG_DATA, 30])),
            };
            te.domain = Some(0);
            (vec![tr], vec![te])
        }
    };
    let first = train_domains.first().ok_or_else(|| Error::Config("dataset produced no domains".into()))?;
    let (input, classes) = (first.sample_shape().to_vec(), first.classes);
    let arch = cfg.arch(&input, classes)?;
    let (shards, tests) = partition(cfg, train_domains, test_domains)?;
    let budgets = assign_budgets(shards.len(), &cfg.budgets, m, cfg.seed)?;
    let clients = build_clients(shards, Some(tests), &budgets, cfg.partitioner.val_fraction, cfg.seed)?;
    Ok(Prepared { clients, arch, m })
}

fn full_classes(classes: &Option<usize>) -> Result<usize> {
    classes.ok_or_else(|| Error::Config("dataset.classes is required with a separate test file".into()))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoundRow {
    pub round: usize,
    pub width: f64,
    pub val_acc: Option<f64>,
    pub uploaded_params: u64,
    pub downloaded_params: u64,
    pub macs: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FinalRow {
    pub width: f64,
    pub acc: f64,
    pub macs: u64,
    pub params: u64,
    pub budget_compatible: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DomainRow {
    pub domain: usize,
    pub clients: usize,
    pub trained_param_pct: f64,
}

/// Everything one method produced.
#[derive(Clone, Debug)]
pub struct MethodResult {
    pub name: String,
    pub rounds: Vec<RoundRow>,
    pub final_table: Vec<FinalRow>,
    pub tradeoff: Option<Vec<TradeoffPoint>>,
    pub domain_report: Option<Vec<DomainRow>>,
    pub checkpoint: Option<BaseModelSet>,
}

/// Runs of every configured method.
#[derive(Clone, Debug)]
pub struct ResultsBundle {
    pub config: ExperimentConfig,
    pub methods: Vec<MethodResult>,
}

impl ResultsBundle {
    pub fn method(&self, name: &str) -> Option<&MethodResult> {
        self.methods.iter().find(|m| m.name == name)
    }
}

fn round_rows(records: &[RoundRecord], macs_of: impl Fn(f64) -> u64, widths: &[f64]) -> Vec<RoundRow> {
    let mut rows = Vec::new();
    for rec in records {
        for &w in widths {
            let val_acc = rec.val_acc.iter().find(|(x, _)| *x == w).map(|(_, a)| *a);
            rows.push(RoundRow {
                round: rec.round,
                width: w,
                val_acc,
                uploaded_params: rec.uploaded_params,
                downloaded_params: rec.downloaded_params,
                macs: macs_of(w),
            });
        }
    }
    rows
}

/// Percent of full-width parameters trained per contacted client-round,
/// grouped by domain. `trained(rec, client)` gives the parameters a client
/// trained in a round (0 when it dropped or failed).
fn domain_report(
    clients: &[ClientSpec],
    records: &[RoundRecord],
    full_params: u64,
    trained: impl Fn(&RoundRecord, usize, &[usize]) -> u64,
) -> Vec<DomainRow> {
    let domains = clients.iter().map(|c| c.domain.unwrap_or(0)).max().map_or(0, |d| d + 1);
    let mut num = vec![0u64; domains];
    let mut den = vec![0u64; domains];
    for rec in records {
        for (c, assigned) in &rec.assignments {
            let d = clients[*c].domain.unwrap_or(0);
            den[d] += full_params;
            let lost = rec.dropped.contains(c) || rec.failed.iter().any(|(f, _)| f == c);
            if !lost {
                num[d] += trained(rec, *c, assigned);
            }
        }
    }
    (0..domains)
        .map(|d| DomainRow {
            domain: d,
            clients: clients.iter().filter(|c| c.domain.unwrap_or(0) == d).count(),
            trained_param_pct: if den[d] == 0 { 0.0 } else { 100.0 * num[d] as f64 / den[d] as f64 },
        })
        .collect()
}

fn baseline_widths(cfg: &ExperimentConfig, m: usize) -> Result<Vec<Width>> {
    let mut ws: Vec<Width> = match &cfg.baseline.widths {
        Some(list) => list.iter().map(|&w| Width::from_ratio(w, m)).collect::<Result<_>>()?,
        None => (1..=m).map(|k| Width::atoms(k, m)).collect::<Result<_>>()?,
    };
    ws.sort();
    ws.dedup();
    Ok(ws)
}

/// Split-Mix with the configured options.
pub fn run_splitmix_method(cfg: &ExperimentConfig, prep: &Prepared) -> Result<MethodResult> {
    let atom = Width::atoms(1, prep.m)?;
    let set = build_base_models(&prep.arch, atom, cfg.seed)?;
    let rule = if cfg.robustness.enabled {
        LocalRule::Adversarial(AdvTraining::dual(cfg.robustness.attack()))
    } else {
        LocalRule::Standard
    };
    let opts = SplitMixOptions {
        rule,
        seed: cfg.seed,
        sort: cfg.splitmix.sort,
        post_bn_passes: cfg.splitmix.post_bn_passes,
        completion_shuffle: cfg.completion_shuffle,
    };
    let out = run_splitmix(set, &prep.clients, &cfg.schedule, &opts)?;
    let base_macs = out.set.base_macs()?;
    let base_params = out.set.base_params() as u64;
    let widths: Vec<f64> = out.set.widths().iter().map(|w| w.as_f64()).collect();
    let rounds = round_rows(&out.records, |w| (w * prep.m as f64).round() as u64 * base_macs, &widths);
    let evals = evaluate_widths(&out.set, &prep.clients, Split::Test, cfg.schedule.eval_batch, BnRoute::Clean, &out.local_stats)?;
    let final_table = evals
        .iter()
        .map(|e| {
            let k = e.width.atoms_in(prep.m) as u64;
            FinalRow { width: e.width.as_f64(), acc: e.accuracy(), macs: k * base_macs, params: k * base_params, budget_compatible: true }
        })
        .collect();
    let tradeoff = if cfg.robustness.enabled {
        let users: Vec<&LabeledDataset> = prep.clients.iter().filter_map(|c| c.test.as_ref()).collect();
        Some(tradeoff_sweep(
            &out.set,
            &out.set.widths(),
            &cfg.robustness.lambda_grid,
            &users,
            &cfg.robustness.attack(),
            cfg.schedule.eval_batch,
            cfg.seed,
        )?)
    } else {
        None
    };
    let report = domain_report(&prep.clients, &out.records, base_params * prep.m as u64, |_, _, a| {
        a.len() as u64 * base_params
    });
    Ok(MethodResult {
        name: "splitmix".into(),
        rounds,
        final_table,
        tradeoff,
        domain_report: Some(report),
        checkpoint: Some(out.set),
    })
}

/// SHeteroFL over the baseline widths.
pub fn run_sheterofl_method(cfg: &ExperimentConfig, prep: &Prepared) -> Result<MethodResult> {
    let widths = baseline_widths(cfg, prep.m)?;
    let opts = SHeteroOptions {
        seed: cfg.seed,
        post_bn_passes: cfg.splitmix.post_bn_passes,
        completion_shuffle: cfg.completion_shuffle,
    };
    let out = run_sheterofl(&prep.arch, &widths, &prep.clients, &cfg.schedule, &opts)?;
    let mut macs = Vec::new();
    for &w in &widths {
        macs.push((w.as_f64(), count_macs(&out.model.slice_subnet(w)?, &prep.arch.input)?));
    }
    let macs_of = |w: f64| macs.iter().find(|(x, _)| *x == w).map_or(0, |(_, m)| *m);
    let wf: Vec<f64> = widths.iter().map(|w| w.as_f64()).collect();
    let rounds = round_rows(&out.records, macs_of, &wf);
    let max_budget = prep.clients.iter().map(|c| c.budget).max().expect("clients");
    let evals = out.evaluate(&prep.clients, Split::Test, &cfg.schedule, &opts)?;
    let final_table = evals
        .iter()
        .map(|e| {
            Ok(FinalRow {
                width: e.width.as_f64(),
                acc: e.accuracy(),
                macs: macs_of(e.width.as_f64()),
                params: out.model.params_at(e.width)? as u64,
                budget_compatible: e.width <= max_budget,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let widest = *widths.last().expect("non-empty width set");
    let full = out.model.params_at(widest)? as u64;
    let model = &out.model;
    let report = domain_report(&prep.clients, &out.records, full, |_, _, assigned| {
        assigned.last().map_or(0, |&i| model.params_at(widths[i]).unwrap_or(0) as u64)
    });
    Ok(MethodResult {
        name: BaselineKind::Sheterofl.name().into(),
        rounds,
        final_table,
        tradeoff: None,
        domain_report: Some(report),
        checkpoint: None,
    })
}

/// Independent FedAvg runs, one per baseline width.
pub fn run_fedavg_method(cfg: &ExperimentConfig, prep: &Prepared) -> Result<MethodResult> {
    let min_budget = prep.clients.iter().map(|c| c.budget).min().expect("clients");
    let rule = if cfg.robustness.enabled {
        LocalRule::Adversarial(AdvTraining {
            attack: cfg.robustness.attack(),
            lambda_n: cfg.robustness.lambda_n,
            dual_bn: false,
        })
    } else {
        LocalRule::Standard
    };
    let mut arch = prep.arch.clone();
    arch.dual_bn = false;
    let mut rounds = Vec::new();
    let mut final_table = Vec::new();
    for w in baseline_widths(cfg, prep.m)? {
        let compatible = w <= min_budget;
        if !compatible && !cfg.baseline.upper_bound {
            warn!("fedavg: skipping ×{w}, above the smallest client budget {min_budget}");
            continue;
        }
        let opts = FedAvgOptions {
            seed: cfg.seed,
            rule,
            upper_bound: cfg.baseline.upper_bound,
            post_bn_passes: cfg.splitmix.post_bn_passes,
        };
        let out = fedavg_individual(&arch, w, &prep.clients, &cfg.schedule, &opts)?;
        let macs = count_macs(&out.model, &arch.input)?;
        let params = count_params(&out.model) as u64;
        rounds.extend(round_rows(&out.records, |_| macs, &[w.as_f64()]));
        let acc = evaluate_model(&out.model, w, &prep.clients, Split::Test, cfg.schedule.eval_batch, BnRoute::Clean)?.accuracy();
        final_table.push(FinalRow { width: w.as_f64(), acc, macs, params, budget_compatible: compatible });
    }
    rounds.sort_by(|a, b| a.round.cmp(&b.round).then(a.width.total_cmp(&b.width)));
    Ok(MethodResult {
        name: BaselineKind::FedavgIndividual.name().into(),
        rounds,
        final_table,
        tradeoff: None,
        domain_report: None,
        checkpoint: None,
    })
}

/// Run every configured method.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultsBundle> {
    let prep = prepare(cfg)?;
    if cfg.architecture.bn_mode == BnMode::PostAverage && cfg.robustness.enabled {
        return Err(Error::Config("post_average statistics are not supported with robustness training".into()));
    }
    info!("{} clients, M = {}, architecture {}", prep.clients.len(), prep.m, prep.arch.id);
    let mut methods = Vec::new();
    if cfg.splitmix.enabled {
        methods.push(run_splitmix_method(cfg, &prep)?);
    }
    match cfg.baseline.kind {
        BaselineKind::None => {}
        BaselineKind::Sheterofl => methods.push(run_sheterofl_method(cfg, &prep)?),
        BaselineKind::FedavgIndividual => methods.push(run_fedavg_method(cfg, &prep)?),
    }
    Ok(ResultsBundle { config: cfg.clone(), methods })
}
