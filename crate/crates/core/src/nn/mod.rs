//! Minimal neural-network substrate: tensors, width-sliceable layers,
//! batch-norm in four statistics modes, reverse-mode gradients, SGD.

pub mod arch;
pub mod batchnorm;
pub mod checkpoint;
pub mod count;
pub mod init;
pub mod layers;
pub mod loss;
pub mod model;
pub mod optim;
pub mod postbn;
pub mod tensor;

pub use arch::{ArchSpec, LayerSpec, Width};
pub use batchnorm::{BatchNorm, BnMode, BnRoute, DualBn, Phase};
pub use count::{count_macs, count_params};
pub use loss::{accuracy, masked_cross_entropy, CrossEntropy, Objective};
pub use model::{Layer, Mode, ModelGraph};
pub use optim::Sgd;
pub use postbn::post_average_bn;
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// Inputs with their class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Tensor, labels: Vec<usize>) -> Result<Batch> {
        if inputs.batch() != labels.len() {
            return Err(Error::shape("batch labels", &[inputs.batch()], &[labels.len()]));
        }
        Ok(Batch { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Anything that maps inputs to logits and can differentiate a loss with
/// respect to its input: a single model or a mixture of models.
pub trait Predictor: Sync {
    fn logits(&self, x: &Tensor, mode: Mode) -> Result<Tensor>;

    fn input_gradient(&self, x: &Tensor, labels: &[usize], objective: &dyn Objective, mode: Mode)
        -> Result<(f64, Tensor)>;
}

impl Predictor for ModelGraph {
    fn logits(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        Ok(self.forward(x, mode)?.0)
    }

    fn input_gradient(&self, x: &Tensor, labels: &[usize], objective: &dyn Objective, mode: Mode)
        -> Result<(f64, Tensor)> {
        ModelGraph::input_gradient(self, x, labels, objective, mode)
    }
}

/// Number of correct eval-phase predictions, evaluated in chunks of
/// `batch_size` samples.
pub fn count_correct(
    model: &dyn Predictor,
    inputs: &Tensor,
    labels: &[usize],
    batch_size: usize,
    route: BnRoute,
) -> Result<usize> {
    let n = labels.len();
    let mut total = 0;
    let mut start = 0;
    while start < n {
        let end = (start + batch_size.max(1)).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let logits = model.logits(&inputs.gather_rows(&idx), Mode::eval().with_route(route))?;
        total += loss::correct(&logits, &labels[start..end]);
        start = end;
    }
    Ok(total)
}
