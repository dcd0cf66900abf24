#![allow(dead_code)]

pub mod gradcheck;
pub mod reference;

use splitmix::data::{feature_noniid_partition, spread_clients, synth_multidomain, SynthConfig};
use splitmix::fedsim::{build_clients, ClientSpec, TrainingSchedule};
use splitmix::nn::{ArchSpec, BnMode, Width};

/// Small vector-input task.
pub fn tiny_synth(classes: usize, per_domain: usize, dim: usize) -> SynthConfig {
    SynthConfig {
        classes,
        domains: 2,
        train_per_domain: per_domain,
        test_per_domain: per_domain / 2,
        dim,
        image_side: None,
        ..Default::default()
    }
}

/// `budgets.len()` clients over two synthetic domains.
pub fn tiny_clients(budgets: &[Width], per_domain: usize, seed: u64) -> Vec<ClientSpec> {
    let domains = budgets.len().min(2);
    let cfg = SynthConfig { domains, ..tiny_synth(4, per_domain, 6) };
    let data = synth_multidomain(&cfg, seed).unwrap();
    let (train, test): (Vec<_>, Vec<_>) = data.domains.into_iter().unzip();
    let cpd = spread_clients(budgets.len(), domains);
    let shards = feature_noniid_partition(&train, &cpd, seed).unwrap();
    let tests = feature_noniid_partition(&test, &cpd, seed + 1).unwrap();
    build_clients(shards, Some(tests), budgets, 0.1, seed).unwrap()
}

pub fn tiny_mlp(bn: BnMode) -> ArchSpec {
    let mut a = ArchSpec::mlp(6, &[8], 4);
    a.bn_mode = bn;
    a
}

pub fn quick_schedule(rounds: usize) -> TrainingSchedule {
    TrainingSchedule { rounds, batch_size: 8, lr: 0.05, eval_every: rounds.max(1), ..Default::default() }
}

pub fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}
