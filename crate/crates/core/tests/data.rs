use proptest::prelude::*;
use splitmix::data::partition::class_noniid_indices;
use splitmix::data::{feature_noniid_partition, iid_partition, synth_multidomain, LabeledDataset, SynthConfig};
use splitmix::fedsim::{train_model, LocalConfig, LocalRule};
use splitmix::nn::{accuracy, ArchSpec, BnRoute, CrossEntropy, ModelGraph, Tensor, Width};
use statrs::distribution::{ContinuousCDF, Normal};

fn vec_cfg(classes: usize, dim: usize, margin: f64, n: usize) -> SynthConfig {
    SynthConfig {
        classes,
        domains: 1,
        train_per_domain: n,
        test_per_domain: n,
        dim,
        image_side: None,
        margin,
        noise: 1.0,
        domain_shift: 0.0,
        domain_rotation: 0.0,
        domain_scale: 0.0,
        ..Default::default()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

#[test]
fn nearest_prototype_matches_gaussian_bayes_rate() {
    // Two isotropic clusters `margin` apart: Bayes accuracy is Φ(margin / 2σ).
    let margin = 2.0;
    let n = 20_000;
    let data = synth_multidomain(&vec_cfg(2, 8, margin, n), 7).unwrap();
    let test = &data.domains[0].1;
    let protos: Vec<Vec<f64>> = data
        .prototypes
        .iter()
        .map(|p| p.iter().map(|v| (v - data.offset) * data.scale).collect())
        .collect();
    let hits = (0..test.len())
        .filter(|&i| {
            let x = test.inputs.row(i);
            let pred = if sq_dist(x, &protos[0]) <= sq_dist(x, &protos[1]) { 0 } else { 1 };
            pred == test.labels[i]
        })
        .count();
    let acc = hits as f64 / n as f64;
    let bayes = Normal::new(0.0, 1.0).unwrap().cdf(margin / 2.0);
    let sd = (bayes * (1.0 - bayes) / n as f64).sqrt();
    assert!((acc - bayes).abs() < 4.0 * sd, "nearest prototype {acc}, Bayes {bayes}");
}

#[test]
fn knn_does_not_beat_bayes() {
    let margin = 2.0;
    let data = synth_multidomain(&vec_cfg(2, 4, margin, 1500), 8).unwrap();
    let (train, test) = &data.domains[0];
    let k = 31;
    let mut hits = 0;
    for i in 0..test.len() {
        let x = test.inputs.row(i);
        let mut d: Vec<(f64, usize)> = (0..train.len()).map(|j| (sq_dist(x, train.inputs.row(j)), train.labels[j])).collect();
        d.select_nth_unstable_by(k, |a, b| a.0.total_cmp(&b.0));
        let ones = d[..k].iter().filter(|(_, y)| *y == 1).count();
        hits += usize::from(usize::from(2 * ones > k) == test.labels[i]);
    }
    let acc = hits as f64 / test.len() as f64;
    let bayes = Normal::new(0.0, 1.0).unwrap().cdf(margin / 2.0);
    let sd = (bayes * (1.0 - bayes) / test.len() as f64).sqrt();
    assert!(acc < bayes + 4.0 * sd, "k-NN {acc} above Bayes {bayes}");
    assert!(acc > bayes - 0.06, "k-NN {acc} far below Bayes {bayes}");
}

fn class_means(ds: &LabeledDataset) -> Vec<Vec<f64>> {
    let d = ds.inputs.row_len();
    let mut sums = vec![vec![0.0; d]; ds.classes];
    let mut counts = vec![0.0; ds.classes];
    for i in 0..ds.len() {
        let y = ds.labels[i];
        counts[y] += 1.0;
        sums[y].iter_mut().zip(ds.inputs.row(i)).for_each(|(s, v)| *s += v);
    }
    sums.into_iter().zip(counts).map(|(s, c)| s.into_iter().map(|v| v / c).collect()).collect()
}

#[test]
fn zero_shift_domains_share_one_distribution() {
    let cfg = SynthConfig { domains: 3, ..vec_cfg(3, 6, 4.0, 3000) };
    let data = synth_multidomain(&cfg, 3).unwrap();
    let means: Vec<_> = data.domains.iter().map(|(tr, _)| class_means(tr)).collect();
    // Per-coordinate standard error of a class mean, in normalized units.
    let se = data.scale / (1000.0f64).sqrt();
    for d in 1..3 {
        assert_ne!(data.domains[0].0.inputs.data(), data.domains[d].0.inputs.data());
        for c in 0..3 {
            for (a, b) in means[0][c].iter().zip(&means[d][c]) {
                assert!((a - b).abs() < 6.0 * se, "domain {d} class {c}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn shifted_domains_differ() {
    let cfg = SynthConfig { domains: 2, domain_shift: 3.0, ..vec_cfg(3, 6, 4.0, 3000) };
    let data = synth_multidomain(&cfg, 3).unwrap();
    let a = class_means(&data.domains[0].0);
    let b = class_means(&data.domains[1].0);
    let gap = sq_dist(&a[0], &b[0]).sqrt() / data.scale;
    assert!(gap > 2.0, "raw-space mean gap {gap}");
}

#[test]
fn linear_probe_separates_wide_margin_classes() {
    let data = synth_multidomain(&vec_cfg(10, 16, 8.0, 2000), 4).unwrap();
    let (train, test) = &data.domains[0];
    let arch = ArchSpec::mlp(16, &[], 10);
    let mut model = ModelGraph::build(&arch, Width::new(1, 1).unwrap(), 1).unwrap();
    let obj = CrossEntropy::new();
    let cfg = LocalConfig {
        epochs: 20,
        batch_size: 32,
        lr: 0.5,
        momentum: 0.9,
        weight_decay: 0.0,
        objective: &obj,
        rule: LocalRule::Standard,
    };
    train_model(&mut model, train, &cfg, &mut splitmix::rng::stream(0, &[])).unwrap();
    let acc = accuracy(&model.predict(&test.inputs, BnRoute::Clean).unwrap(), &test.labels);
    assert!(acc > 0.98, "linear probe accuracy {acc}");
}

#[test]
fn images_have_requested_shape_and_range() {
    let cfg = SynthConfig { train_per_domain: 50, test_per_domain: 20, ..Default::default() };
    let data = synth_multidomain(&cfg, 1).unwrap();
    assert_eq!(data.domains.len(), 3);
    for (d, (tr, te)) in data.domains.iter().enumerate() {
        assert_eq!(tr.inputs.shape(), &[50, 1, 8, 8]);
        assert_eq!(te.len(), 20);
        assert_eq!(tr.domain, Some(d));
        assert!(tr.inputs.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn generation_is_a_function_of_the_seed() {
    let cfg = vec_cfg(3, 6, 4.0, 200);
    let a = synth_multidomain(&cfg, 5).unwrap();
    let b = synth_multidomain(&cfg, 5).unwrap();
    let c = synth_multidomain(&cfg, 6).unwrap();
    assert_eq!(a.domains[0].0.inputs.data(), b.domains[0].0.inputs.data());
    assert_ne!(a.domains[0].0.inputs.data(), c.domains[0].0.inputs.data());
}

fn labelled(labels: Vec<usize>, classes: usize) -> LabeledDataset {
    let n = labels.len();
    LabeledDataset::new(Tensor::from_vec(&[n, 1], (0..n).map(|i| i as f64).collect()).unwrap(), labels, classes, None).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, ..ProptestConfig::default() })]

    #[test]
    fn class_partition_is_an_exact_cover(
        classes in 2usize..12,
        clients in 1usize..20,
        cpc_seed in any::<usize>(),
        per_class in 20usize..40,
        seed in any::<u64>(),
    ) {
        let cpc = 1 + cpc_seed % classes;
        prop_assume!(clients * cpc >= classes);
        let labels: Vec<usize> = (0..classes * per_class).map(|i| i % classes).collect();
        let shards = class_noniid_indices(&labels, classes, clients, cpc, seed).unwrap();
        prop_assert_eq!(shards.len(), clients);
        let mut seen = vec![0u32; labels.len()];
        for s in &shards {
            let mut cls: Vec<usize> = s.iter().map(|&i| labels[i]).collect();
            cls.sort_unstable();
            cls.dedup();
            prop_assert_eq!(cls.len(), cpc);
            for &i in s {
                seen[i] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn iid_and_domain_partitions_are_disjoint_covers(
        sizes in proptest::collection::vec(10usize..60, 1..4),
        clients_each in 1usize..5,
        seed in any::<u64>(),
    ) {
        let domains: Vec<LabeledDataset> = sizes
            .iter()
            .enumerate()
            .map(|(d, &n)| {
                let mut ds = labelled((0..n).map(|i| i % 3).collect(), 3);
                ds.domain = Some(d);
                ds
            })
            .collect();
        let cpd = vec![clients_each; domains.len()];
        let shards = feature_noniid_partition(&domains, &cpd, seed).unwrap();
        prop_assert_eq!(shards.len(), clients_each * domains.len());
        for (d, ds) in domains.iter().enumerate() {
            let mine = &shards[d * clients_each..(d + 1) * clients_each];
            let mut vals: Vec<u64> = mine.iter().flat_map(|s| s.inputs.data().iter().map(|v| *v as u64)).collect();
            vals.sort_unstable();
            prop_assert_eq!(vals, (0..ds.len() as u64).collect::<Vec<_>>());
            prop_assert!(mine.iter().all(|s| s.domain == Some(d)));
            let lens: Vec<usize> = mine.iter().map(|s| s.len()).collect();
            prop_assert!(lens.iter().max().unwrap() - lens.iter().min().unwrap() <= 1);
        }
        let flat = &domains[0];
        let parts = iid_partition(flat, clients_each.min(flat.len()), seed).unwrap();
        let mut vals: Vec<u64> = parts.iter().flat_map(|s| s.inputs.data().iter().map(|v| *v as u64)).collect();
        vals.sort_unstable();
        prop_assert_eq!(vals, (0..flat.len() as u64).collect::<Vec<_>>());
    }
}
