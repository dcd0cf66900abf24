use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::{count_params, ArchSpec, Layer, ModelGraph, Width};

/// One full-width set of shared weights plus, per active width, its own
/// batch-norm parameters and statistics. The ×w subnet uses the leading `w`
/// fraction of channels of every hidden layer.
#[derive(Clone, Debug)]
pub struct SlimmableModel {
    pub arch: ArchSpec,
    pub full: ModelGraph,
    /// Per-width models; only their batch-norm layers are authoritative.
    pub protos: BTreeMap<Width, ModelGraph>,
}

impl SlimmableModel {
    pub fn new(arch: &ArchSpec, widths: &[Width], seed: u64) -> Result<SlimmableModel> {
        if widths.is_empty() {
            return Err(Error::Config("slimmable model needs at least one width".into()));
        }
        let full = ModelGraph::build(arch, Width::FULL, seed)?;
        let mut protos = BTreeMap::new();
        for &w in widths {
            arch.check_width(w).map_err(|e| Error::Config(e.to_string()))?;
            protos.insert(w, ModelGraph::skeleton(arch, w)?);
        }
        Ok(SlimmableModel { arch: arch.clone(), full, protos })
    }

    pub fn widths(&self) -> Vec<Width> {
        self.protos.keys().copied().collect()
    }

    /// The ×`w` subnet: leading weight blocks of the shared tensors plus the
    /// width's own batch-norm layers.
    pub fn slice_subnet(&self, w: Width) -> Result<ModelGraph> {
        let mut sub = self.protos.get(&w).ok_or_else(|| unknown(w, &self.widths()))?.clone();
        for (s, f) in sub.layers.iter_mut().zip(&self.full.layers) {
            match (s, f) {
                (Layer::Dense(s), Layer::Dense(f)) => {
                    s.weight = f.weight.leading_block(s.weight.shape());
                    s.bias = f.bias.leading_block(s.bias.shape());
                }
                (Layer::Conv2d(s), Layer::Conv2d(f)) => {
                    s.weight = f.weight.leading_block(s.weight.shape());
                    s.bias = f.bias.leading_block(s.bias.shape());
                }
                _ => {}
            }
        }
        Ok(sub)
    }

    /// Write a (trained) ×`w` subnet back: its weights into the leading
    /// blocks, its batch-norm layers into the width's own slot.
    pub fn write_back(&mut self, w: Width, sub: &ModelGraph) -> Result<()> {
        if sub.width != w || !self.protos.contains_key(&w) {
            return Err(unknown(w, &self.widths()));
        }
        for (f, s) in self.full.layers.iter_mut().zip(&sub.layers) {
            match (f, s) {
                (Layer::Dense(f), Layer::Dense(s)) => {
                    f.weight.write_leading_block(&s.weight);
                    f.bias.write_leading_block(&s.bias);
                }
                (Layer::Conv2d(f), Layer::Conv2d(s)) => {
                    f.weight.write_leading_block(&s.weight);
                    f.bias.write_leading_block(&s.bias);
                }
                _ => {}
            }
        }
        self.protos.insert(w, sub.clone());
        Ok(())
    }

    /// Parameters of the ×`w` subnet.
    pub fn params_at(&self, w: Width) -> Result<usize> {
        Ok(count_params(self.protos.get(&w).ok_or_else(|| unknown(w, &self.widths()))?))
    }
}

fn unknown(w: Width, widths: &[Width]) -> Error {
    let valid: Vec<String> = widths.iter().map(|w| w.to_string()).collect();
    Error::Invalid(format!("width {w} is not in the slimmable width set {{{}}}", valid.join(", ")))
}
