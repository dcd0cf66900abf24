use super::model::{Layer, ModelGraph};
use crate::error::{Error, Result};

/// Inference-time parameter count: weights, biases and every batch-norm
/// affine pair (both branches of a dual BN). Running statistics are buffers
/// and are excluded.
pub fn count_params(model: &ModelGraph) -> usize {
    model.params().iter().map(|p| p.len()).sum()
}

/// Multiply-accumulate operations of one forward pass on a single sample of
/// `input_shape` (`[C,H,W]` or `[D]`).
pub fn count_macs(model: &ModelGraph, input_shape: &[usize]) -> Result<u64> {
    let mut shape = input_shape.to_vec();
    let mut macs = 0u64;
    for layer in &model.layers {
        match layer {
            Layer::Conv2d(c) => {
                let &[ch, h, w] = shape.as_slice() else {
                    return Err(Error::shape("conv2d input for MAC count", &[0, 0, 0], &shape));
                };
                if ch != c.in_channels() {
                    return Err(Error::shape("conv2d channels", &[c.in_channels()], &[ch]));
                }
                let (ho, wo) = c.output_hw(h, w);
                let k = c.kernel();
                macs += (ho * wo * c.out_channels() * k * k * ch) as u64;
                shape = vec![c.out_channels(), ho, wo];
            }
            Layer::Dense(d) => {
                let f: usize = shape.iter().product();
                if f != d.in_features() {
                    return Err(Error::shape("dense input for MAC count", &[d.in_features()], &[f]));
                }
                macs += (d.in_features() * d.out_features()) as u64;
                shape = vec![d.out_features()];
            }
            Layer::MaxPool2d(p) => {
                let (ho, wo) = p.output_hw(shape[1], shape[2]);
                shape = vec![shape[0], ho, wo];
            }
            Layer::Flatten => shape = vec![shape.iter().product()],
            Layer::BatchNorm(_) | Layer::DualBn(_) | Layer::Relu => {}
        }
    }
    Ok(macs)
}
