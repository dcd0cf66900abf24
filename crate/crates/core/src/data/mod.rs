//! Datasets, synthetic multi-domain generation, non-iid partitioning and
//! file ingestion.

pub mod io;
pub mod partition;
pub mod synth;

pub use io::{load_dataset, save_dataset, DataFormat};
pub use partition::{class_noniid_partition, feature_noniid_partition, iid_partition, spread_clients};
pub use synth::{synth_multidomain, SynthConfig, SynthData};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{DataError, Error, Result};
use crate::nn::{Batch, Tensor};

/// Samples with labels; every input value lies in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub domain: Option<usize>,
}

impl LabeledDataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, classes: usize, domain: Option<usize>) -> Result<Self> {
        if inputs.batch() != labels.len() {
            return Err(Error::shape("dataset labels", &[inputs.batch()], &[labels.len()]));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(DataError::LabelOutOfRange { label, classes }.into());
        }
        Ok(LabeledDataset { inputs, labels, classes, domain })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Shape of a single sample.
    pub fn sample_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    pub fn subset(&self, idx: &[usize]) -> LabeledDataset {
        LabeledDataset {
            inputs: self.inputs.gather_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            domain: self.domain,
        }
    }

    /// Sorted distinct labels.
    pub fn label_set(&self) -> Vec<usize> {
        let mut seen = vec![false; self.classes];
        self.labels.iter().for_each(|&l| seen[l] = true);
        (0..self.classes).filter(|&c| seen[c]).collect()
    }

    /// One shuffled epoch of mini-batches.
    pub fn shuffled_batches<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Vec<Batch> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(rng);
        self.batches_of(&idx, batch_size)
    }

    /// Mini-batches in storage order.
    pub fn batches(&self, batch_size: usize) -> Vec<Batch> {
        let idx: Vec<usize> = (0..self.len()).collect();
        self.batches_of(&idx, batch_size)
    }

    fn batches_of(&self, idx: &[usize], batch_size: usize) -> Vec<Batch> {
        idx.chunks(batch_size.max(1))
            .map(|c| Batch {
                inputs: self.inputs.gather_rows(c),
                labels: c.iter().map(|&i| self.labels[i]).collect(),
            })
            .collect()
    }

    /// Split off the last `fraction` of a seeded shuffle as validation data.
    pub fn split_validation<R: Rng + ?Sized>(&self, fraction: f64, rng: &mut R) -> (LabeledDataset, LabeledDataset) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(rng);
        let n_val = ((self.len() as f64 * fraction).round() as usize).min(self.len().saturating_sub(1));
        let (train, val) = idx.split_at(self.len() - n_val);
        (self.subset(train), self.subset(val))
    }

    /// Concatenate datasets with identical sample shapes.
    pub fn concat(parts: &[&LabeledDataset]) -> Result<LabeledDataset> {
        let first = parts.first().ok_or(DataError::Empty)?;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            if p.sample_shape() != first.sample_shape() {
                return Err(Error::shape("dataset concat", first.sample_shape(), p.sample_shape()));
            }
            data.extend_from_slice(p.inputs.data());
            labels.extend_from_slice(&p.labels);
        }
        let mut shape = vec![labels.len()];
        shape.extend_from_slice(first.sample_shape());
        let domain = parts.iter().all(|p| p.domain == first.domain).then_some(first.domain).flatten();
        LabeledDataset::new(Tensor::from_vec(&shape, data)?, labels, first.classes, domain)
    }
}
