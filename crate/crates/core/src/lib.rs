//! Split-Mix federated learning.
//!
//! A deterministic desk-scale simulator for training a set of slim base
//! networks across clients with heterogeneous width budgets, then
//! customizing the deployed model's width (by averaging the logits of a
//! prefix of bases) and its robustness (by mixing dual batch-norm branches)
//! without retraining. FedAvg and slimmable HeteroFL are included as
//! baselines.

pub mod baselines;
pub mod bench;
pub mod data;
pub mod error;
pub mod fedsim;
pub mod nn;
pub mod robustness;
pub mod rng;
pub mod splitmix;

pub use error::{DataError, Error, Result};
