use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::Tensor;

/// He/Kaiming normal standard deviation for ReLU networks.
pub fn kaiming_std(fan_in: usize) -> f64 {
    (2.0 / fan_in as f64).sqrt()
}

/// Fill `weight` from `N(0, 2 / fan_in)`.
///
/// Slices of a wider network pass the fan-in of the ×1 layer here rather
/// than their own, which shrinks the initial weights by `sqrt(r)`.
pub fn kaiming_init_rescaled<R: Rng + ?Sized>(weight: &mut Tensor, fan_in: usize, rng: &mut R) {
    let normal = Normal::new(0.0, kaiming_std(fan_in)).expect("finite std");
    for v in weight.data_mut() {
        *v = normal.sample(rng);
    }
}
