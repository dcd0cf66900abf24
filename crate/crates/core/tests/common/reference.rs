use splitmix::fedsim::{local_stream, select_participants, train_model, weighted_mean, ClientSpec, LocalConfig, LocalRule, TrainingSchedule};
use splitmix::nn::{ArchSpec, ModelGraph, Width};
use splitmix::rng;

/// Textbook FedAvg written against the public training primitives.
pub fn reference_fedavg(arch: &ArchSpec, clients: &[ClientSpec], sched: &TrainingSchedule, seed: u64) -> ModelGraph {
    let mut global = ModelGraph::build(arch, Width::new(1, 1).unwrap(), rng::derive(seed, &[rng::TAG_INIT, 0])).unwrap();
    for t in 0..sched.rounds {
        let chosen = select_participants(clients.len(), clients.len(), seed, t).unwrap();
        let mut locals = Vec::new();
        for &c in &chosen {
            let obj = clients[c].objective(sched.masked_loss).unwrap();
            let cfg = LocalConfig {
                epochs: sched.local_epochs,
                batch_size: sched.batch_size,
                lr: sched.lr_at(t),
                momentum: sched.momentum,
                weight_decay: sched.weight_decay,
                objective: &obj,
                rule: LocalRule::Standard,
            };
            let mut local = global.clone();
            train_model(&mut local, &clients[c].train, &cfg, &mut local_stream(seed, t, c, 0)).unwrap();
            locals.push((clients[c].train.len() as f64, local));
        }
        let total: f64 = locals.iter().map(|(w, _)| w).sum();
        let coef: Vec<f64> = locals.iter().map(|(w, _)| w / total).collect();
        let p: Vec<Vec<f64>> = locals.iter().map(|(_, m)| m.flat_params()).collect();
        let b: Vec<Vec<f64>> = locals.iter().map(|(_, m)| m.flat_buffers()).collect();
        global.set_flat_params(&weighted_mean(p.iter().map(|v| &v[..]), &coef).unwrap()).unwrap();
        if arch.bn_mode.aggregates_running_stats() {
            global.set_flat_buffers(&weighted_mean(b.iter().map(|v| &v[..]), &coef).unwrap()).unwrap();
        }
    }
    global
}

