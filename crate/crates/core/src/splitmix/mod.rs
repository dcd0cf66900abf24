//! Base-model sets, the budget-constrained base sampler, and width
//! customization by mixing a prefix of the bases.

use std::fs;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{DataError, Error, Result};
use crate::nn::checkpoint::{load_model, save_model};
use crate::nn::{
    count_correct, count_macs, count_params, ArchSpec, BnRoute, ModelGraph, Mode, Objective, Predictor, Tensor,
    Width,
};
use crate::rng;

/// `M` bases at width `1/M`. Position in `bases` is the mixing order; `ids`
/// remembers each base's index at construction.
#[derive(Clone, Debug)]
pub struct BaseModelSet {
    pub arch: ArchSpec,
    pub bases: Vec<ModelGraph>,
    pub base_seeds: Vec<u64>,
    pub ids: Vec<usize>,
    pub val_acc: Option<Vec<f64>>,
}

/// Build `1/atom` independently initialized bases at width `atom`.
pub fn build_base_models(arch: &ArchSpec, atom: Width, master_seed: u64) -> Result<BaseModelSet> {
    if atom.num() != 1 {
        return Err(Error::Config(format!("atom width {atom} must be 1/M for an integer M")));
    }
    let m = atom.den() as usize;
    arch.check_width(atom).map_err(|e| Error::Config(e.to_string()))?;
    let base_seeds: Vec<u64> = (0..m).map(|i| rng::derive(master_seed, &[rng::TAG_INIT, i as u64])).collect();
    let bases = base_seeds
        .iter()
        .map(|&s| ModelGraph::build(arch, atom, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(BaseModelSet { arch: arch.clone(), bases, base_seeds, ids: (0..m).collect(), val_acc: None })
}

impl BaseModelSet {
    pub fn m(&self) -> usize {
        self.bases.len()
    }

    pub fn atom(&self) -> Width {
        Width::atoms(1, self.m()).expect("M >= 1")
    }

    /// Widths a mixture can realize: `r, 2r, ..., 1`.
    pub fn widths(&self) -> Vec<Width> {
        (1..=self.m()).map(|k| Width::atoms(k, self.m()).expect("k <= M")).collect()
    }

    pub fn base_params(&self) -> usize {
        count_params(&self.bases[0])
    }

    pub fn base_macs(&self) -> Result<u64> {
        count_macs(&self.bases[0], &self.arch.input)
    }

    /// `K_R`: how many bases make up width `width`. Errors unless `width` is a
    /// multiple of the atom.
    pub fn members_for(&self, width: Width) -> Result<usize> {
        let k = width.atoms_in(self.m());
        if Width::atoms(k.max(1), self.m())? != width || k == 0 {
            let valid: Vec<String> = self.widths().iter().map(|w| w.to_string()).collect();
            return Err(Error::Config(format!(
                "width {width} is not a multiple of r = 1/{}; valid widths: {}",
                self.m(),
                valid.join(", ")
            )));
        }
        Ok(k)
    }

    /// The `width` model: the first `K_R` bases in set order.
    pub fn customize(&self, width: Width) -> Result<MixedModel<'_>> {
        let k = self.members_for(width)?;
        MixedModel::new(width, self.bases[..k].iter().collect())
    }

    /// Write `manifest.json` plus `base_{i}.bin` per position.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let manifest = Manifest {
            format_version: 1,
            m: self.m(),
            r: self.atom().as_f64(),
            order: self.ids.clone(),
            base_seeds: self.base_seeds.clone(),
            val_acc: self.val_acc.clone(),
            arch: self.arch.clone(),
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        for (i, b) in self.bases.iter().enumerate() {
            save_model(&dir.join(format!("base_{i}.bin")), b)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<BaseModelSet> {
        let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
        if manifest.format_version != 1 {
            return Err(Error::Invalid(format!("unsupported base set version {}", manifest.format_version)));
        }
        let atom = Width::atoms(1, manifest.m)?;
        let mut bases = Vec::with_capacity(manifest.m);
        for i in 0..manifest.m {
            let b = load_model(&dir.join(format!("base_{i}.bin")))?;
            if b.width != atom || b.arch != manifest.arch {
                return Err(Error::Invalid(format!("base_{i}.bin does not match the manifest")));
            }
            bases.push(b);
        }
        if manifest.order.len() != manifest.m || manifest.base_seeds.len() != manifest.m {
            return Err(Error::Invalid("manifest order/seed lists do not match M".into()));
        }
        Ok(BaseModelSet {
            arch: manifest.arch,
            bases,
            base_seeds: manifest.base_seeds,
            ids: manifest.order,
            val_acc: manifest.val_acc,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    m: usize,
    r: f64,
    order: Vec<usize>,
    base_seeds: Vec<u64>,
    val_acc: Option<Vec<f64>>,
    arch: ArchSpec,
}

/// Cyclic base sampler. `cursor` is 1-based and lies in `1..=M+1`.
#[derive(Clone, Debug)]
pub struct SamplerState {
    perm: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl SamplerState {
    pub fn new(m: usize, seed: u64) -> SamplerState {
        let mut rng = rng::stream(seed, &[rng::TAG_SAMPLER]);
        let mut perm: Vec<usize> = (0..m).collect();
        perm.shuffle(&mut rng);
        SamplerState { perm, cursor: 1, rng }
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    /// `n` distinct base ids: the cursor element first, then `n - 1` drawn
    /// uniformly without replacement from the rest.
    pub fn sample(&mut self, n: usize) -> Result<Vec<usize>> {
        let m = self.perm.len();
        if n == 0 || n > m {
            return Err(Error::Invalid(format!("cannot sample {n} of {m} bases")));
        }
        if self.cursor > m {
            self.perm.shuffle(&mut self.rng);
            self.cursor = 1;
        }
        let head = self.perm[self.cursor - 1];
        let rest: Vec<usize> = self.perm.iter().copied().filter(|&i| i != head).collect();
        let mut out = Vec::with_capacity(n);
        out.push(head);
        out.extend(index::sample(&mut self.rng, m - 1, n - 1).iter().map(|j| rest[j]));
        self.cursor += 1;
        Ok(out)
    }
}

/// `μ_k = μ_{k-1} + (y_k - μ_{k-1}) / k`, which reproduces identical
/// inputs exactly.
#[derive(Default)]
struct RunningMean {
    mean: Option<Tensor>,
    count: usize,
}

impl RunningMean {
    fn push(&mut self, y: Tensor) {
        self.count += 1;
        match &mut self.mean {
            None => self.mean = Some(y),
            Some(m) => {
                let k = self.count as f64;
                for (a, b) in m.data_mut().iter_mut().zip(y.data()) {
                    *a += (b - *a) / k;
                }
            }
        }
    }

    fn finish(self) -> Tensor {
        self.mean.expect("non-empty mixture")
    }
}

/// Uniform average of member logits.
#[derive(Clone, Debug)]
pub struct MixedModel<'a> {
    pub width: Width,
    members: Vec<&'a ModelGraph>,
}

impl<'a> MixedModel<'a> {
    pub fn new(width: Width, members: Vec<&'a ModelGraph>) -> Result<MixedModel<'a>> {
        if members.is_empty() {
            return Err(Error::Invalid("a mixture needs at least one member".into()));
        }
        Ok(MixedModel { width, members })
    }

    pub fn members(&self) -> &[&'a ModelGraph] {
        &self.members
    }

    pub fn params(&self) -> usize {
        self.members.iter().map(|m| count_params(m)).sum()
    }

    pub fn macs(&self) -> Result<u64> {
        self.members.iter().map(|m| count_macs(m, m.input_shape())).sum()
    }

    pub fn predict(&self, x: &Tensor, route: BnRoute) -> Result<Tensor> {
        self.logits(x, Mode::eval().with_route(route))
    }
}

impl Predictor for MixedModel<'_> {
    fn logits(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut mean = RunningMean::default();
        for m in &self.members {
            mean.push(m.forward(x, mode)?.0);
        }
        Ok(mean.finish())
    }

    fn input_gradient(&self, x: &Tensor, labels: &[usize], objective: &dyn Objective, mode: Mode)
        -> Result<(f64, Tensor)> {
        let k = self.members.len() as f64;
        let mut tapes = Vec::with_capacity(self.members.len());
        let mut mean = RunningMean::default();
        for m in &self.members {
            let (y, tape) = m.forward(x, mode)?;
            tapes.push(tape);
            mean.push(y);
        }
        let (loss, mut dlogits) = objective.loss_grad(&mean.finish(), labels)?;
        dlogits.scale(1.0 / k);
        let mut dx = Tensor::zeros(x.shape());
        for (m, tape) in self.members.iter().zip(&tapes) {
            dx.axpy(1.0, &m.backward(tape, &dlogits)?.1);
        }
        Ok((loss, dx))
    }
}

/// Mean logits of the bases at positions `member_ids`.
pub fn mix_predict(set: &BaseModelSet, member_ids: &[usize], x: &Tensor, route: BnRoute) -> Result<Tensor> {
    if let Some(&bad) = member_ids.iter().find(|&&i| i >= set.m()) {
        return Err(Error::Invalid(format!("base {bad} out of range for M = {}", set.m())));
    }
    let width = Width::atoms(member_ids.len().max(1), set.m())?;
    MixedModel::new(width, member_ids.iter().map(|&i| &set.bases[i]).collect())?.predict(x, route)
}

/// Stable descending order of `acc`.
pub fn sort_order(acc: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..acc.len()).collect();
    order.sort_by(|&a, &b| acc[b].total_cmp(&acc[a]));
    order
}

/// Reorder the bases by sample-weighted validation accuracy over the given
/// client shards, best first. Records the accuracies in the new order.
pub fn sort_bases_by_val_acc(
    set: &mut BaseModelSet,
    val: &[&LabeledDataset],
    batch_size: usize,
    route: BnRoute,
) -> Result<()> {
    let total: usize = val.iter().map(|d| d.len()).sum();
    if total == 0 {
        return Err(DataError::Empty.into());
    }
    let acc = set
        .bases
        .iter()
        .map(|b| {
            let mut correct = 0;
            for d in val.iter().filter(|d| !d.is_empty()) {
                correct += count_correct(b, &d.inputs, &d.labels, batch_size, route)?;
            }
            Ok(correct as f64 / total as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    let order = sort_order(&acc);
    set.bases = order.iter().map(|&i| set.bases[i].clone()).collect();
    set.base_seeds = order.iter().map(|&i| set.base_seeds[i]).collect();
    set.ids = order.iter().map(|&i| set.ids[i]).collect();
    set.val_acc = Some(order.iter().map(|&i| acc[i]).collect());
    Ok(())
}
