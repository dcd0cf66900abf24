use crate::data::LabeledDataset;
use crate::error::{DataError, Error, Result};
use crate::nn::{CrossEntropy, Width};
use crate::rng;

/// A simulated client: local train/validation shards, an optional test
/// shard, and a width budget.
#[derive(Clone, Debug)]
pub struct ClientSpec {
    pub id: usize,
    pub train: LabeledDataset,
    pub val: LabeledDataset,
    pub test: Option<LabeledDataset>,
    pub budget: Width,
    pub present_classes: Vec<usize>,
    pub domain: Option<usize>,
}

impl ClientSpec {
    /// Split `val_fraction` of `shard` off as validation data by a seeded
    /// shuffle.
    pub fn new(
        id: usize,
        shard: LabeledDataset,
        test: Option<LabeledDataset>,
        budget: Width,
        val_fraction: f64,
        seed: u64,
    ) -> Result<ClientSpec> {
        if shard.is_empty() {
            return Err(DataError::Empty.into());
        }
        if !(0.0..1.0).contains(&val_fraction) {
            return Err(Error::Config(format!("validation fraction {val_fraction} outside [0, 1)")));
        }
        let domain = shard.domain;
        let (train, val) = shard.split_validation(val_fraction, &mut rng::stream(seed, &[rng::TAG_DATA, 20, id as u64]));
        let present_classes = train.label_set();
        Ok(ClientSpec { id, train, val, test, budget, present_classes, domain })
    }

    /// Local training objective.
    pub fn objective(&self, masked: bool) -> Result<CrossEntropy> {
        if masked {
            CrossEntropy::masked(self.train.classes, &self.present_classes)
        } else {
            Ok(CrossEntropy::new())
        }
    }

    /// Bases this client may hold at once with atom width `1/m`.
    pub fn capacity(&self, m: usize) -> usize {
        self.budget.atoms_in(m)
    }
}

/// Clients `0..shards.len()` with the given budgets.
pub fn build_clients(
    shards: Vec<LabeledDataset>,
    tests: Option<Vec<LabeledDataset>>,
    budgets: &[Width],
    val_fraction: f64,
    seed: u64,
) -> Result<Vec<ClientSpec>> {
    if budgets.len() != shards.len() {
        return Err(Error::Config(format!("{} budgets for {} clients", budgets.len(), shards.len())));
    }
    let mut tests = tests.map(|t| t.into_iter());
    shards
        .into_iter()
        .zip(budgets)
        .enumerate()
        .map(|(k, (s, &b))| {
            let test = tests.as_mut().and_then(|t| t.next());
            ClientSpec::new(k, s, test, b, val_fraction, seed)
        })
        .collect()
}
