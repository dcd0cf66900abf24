use rand::seq::SliceRandom;

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng;

fn split_even(items: &[usize], parts: usize) -> Vec<Vec<usize>> {
    let base = items.len() / parts;
    let extra = items.len() % parts;
    let mut out = Vec::with_capacity(parts);
    let mut off = 0;
    for p in 0..parts {
        let take = base + usize::from(p < extra);
        out.push(items[off..off + take].to_vec());
        off += take;
    }
    out
}

/// Per-client sample indices where each client holds exactly
/// `classes_per_client` labels and each class is divided evenly among the
/// clients holding it.
pub fn class_noniid_indices(
    labels: &[usize],
    classes: usize,
    clients: usize,
    classes_per_client: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if classes_per_client == 0 || classes_per_client > classes {
        return Err(Error::Config(format!(
            "classes_per_client = {classes_per_client} must be in 1..={classes}"
        )));
    }
    if clients == 0 || clients * classes_per_client < classes {
        return Err(Error::Config(format!(
            "{clients} clients × {classes_per_client} classes cannot cover {classes} classes"
        )));
    }
    let mut r = rng::stream(seed, &[rng::TAG_DATA, 1]);
    let mut class_order: Vec<usize> = (0..classes).collect();
    class_order.shuffle(&mut r);
    let mut holders: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for k in 0..clients {
        for j in 0..classes_per_client {
            holders[class_order[(k * classes_per_client + j) % classes]].push(k);
        }
    }
    let mut shards = vec![Vec::new(); clients];
    for (c, hold) in holders.iter().enumerate() {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if idx.len() < hold.len() {
            return Err(Error::Config(format!(
                "class {c} has {} samples for {} holding clients",
                idx.len(),
                hold.len()
            )));
        }
        idx.shuffle(&mut r);
        for (k, part) in hold.iter().zip(split_even(&idx, hold.len())) {
            shards[*k].extend(part);
        }
    }
    for s in &mut shards {
        s.sort_unstable();
    }
    Ok(shards)
}

/// Label-skewed shards; see [`class_noniid_indices`].
pub fn class_noniid_partition(
    ds: &LabeledDataset,
    clients: usize,
    classes_per_client: usize,
    seed: u64,
) -> Result<Vec<LabeledDataset>> {
    let idx = class_noniid_indices(&ds.labels, ds.classes, clients, classes_per_client, seed)?;
    Ok(idx.iter().map(|i| ds.subset(i)).collect())
}

/// Uniform random shards.
pub fn iid_partition(ds: &LabeledDataset, clients: usize, seed: u64) -> Result<Vec<LabeledDataset>> {
    if clients == 0 || clients > ds.len() {
        return Err(Error::Config(format!("cannot split {} samples among {clients} clients", ds.len())));
    }
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(&mut rng::stream(seed, &[rng::TAG_DATA, 2]));
    Ok(split_even(&idx, clients)
        .into_iter()
        .map(|mut s| {
            s.sort_unstable();
            ds.subset(&s)
        })
        .collect())
}

/// Distribute `clients` over `domains` as evenly as possible, earlier
/// domains taking the remainder.
pub fn spread_clients(clients: usize, domains: usize) -> Vec<usize> {
    (0..domains).map(|d| clients / domains + usize::from(d < clients % domains)).collect()
}

/// Split each domain uniformly among its clients. Client order is
/// domain-major, and each shard keeps its domain id.
pub fn feature_noniid_partition(
    domains: &[LabeledDataset],
    clients_per_domain: &[usize],
    seed: u64,
) -> Result<Vec<LabeledDataset>> {
    if domains.is_empty() {
        return Err(Error::Config("feature non-iid partition needs at least one domain".into()));
    }
    if clients_per_domain.len() != domains.len() {
        return Err(Error::Config(format!(
            "{} client counts for {} domains",
            clients_per_domain.len(),
            domains.len()
        )));
    }
    let mut out = Vec::new();
    for (d, (ds, &k)) in domains.iter().zip(clients_per_domain).enumerate() {
        if k == 0 || k > ds.len() {
            return Err(Error::Config(format!("domain {d}: cannot split {} samples among {k} clients", ds.len())));
        }
        let mut idx: Vec<usize> = (0..ds.len()).collect();
        idx.shuffle(&mut rng::stream(seed, &[rng::TAG_DATA, 3, d as u64]));
        for mut s in split_even(&idx, k) {
            s.sort_unstable();
            let mut shard = ds.subset(&s);
            shard.domain = Some(ds.domain.unwrap_or(d));
            out.push(shard);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn labelled(n: usize, classes: usize) -> LabeledDataset {
        let inputs = Tensor::from_vec(&[n, 1], (0..n).map(|i| i as f64 / n as f64).collect()).unwrap();
        LabeledDataset::new(inputs, (0..n).map(|i| i % classes).collect(), classes, None).unwrap()
    }

    #[test]
    fn three_classes_per_client() {
        let ds = labelled(300, 10);
        let shards = class_noniid_partition(&ds, 10, 3, 5).unwrap();
        assert_eq!(shards.len(), 10);
        for s in &shards {
            assert_eq!(s.label_set().len(), 3);
        }
    }

    #[test]
    fn all_classes_per_client_is_label_iid() {
        let ds = labelled(200, 4);
        for s in class_noniid_partition(&ds, 5, 4, 1).unwrap() {
            assert_eq!(s.label_set(), vec![0, 1, 2, 3]);
        }
    }

    #[test]
    fn uncoverable_assignment_is_rejected() {
        let ds = labelled(100, 10);
        assert!(class_noniid_partition(&ds, 3, 3, 0).is_err());
        assert!(class_noniid_partition(&ds, 3, 11, 0).is_err());
    }

    #[test]
    fn feature_partition_cardinality() {
        let domains: Vec<_> = (0..3).map(|_| labelled(40, 2)).collect();
        let shards = feature_noniid_partition(&domains, &[4, 4, 4], 0).unwrap();
        assert_eq!(shards.len(), 12);
        assert_eq!(shards[5].domain, Some(1));
        assert_eq!(shards.iter().map(|s| s.len()).sum::<usize>(), 120);
    }

    #[test]
    fn single_domain_single_client_passthrough() {
        let ds = labelled(10, 2);
        let shards = feature_noniid_partition(std::slice::from_ref(&ds), &[1], 3).unwrap();
        assert_eq!(shards[0].inputs, ds.inputs);
        assert_eq!(shards[0].labels, ds.labels);
    }

    #[test]
    fn spread_handles_remainders() {
        assert_eq!(spread_clients(16, 3), vec![6, 5, 5]);
        assert_eq!(spread_clients(12, 3), vec![4, 4, 4]);
    }
}
