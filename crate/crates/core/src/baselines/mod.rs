//! Reference competitors: FedAvg on individual widths and slimmable
//! HeteroFL with nested parameter sharing.

pub mod fedavg;
pub mod sheterofl;
pub mod slimmable;

pub use fedavg::{fedavg_individual, FedAvgOptions, FedAvgOutcome};
pub use sheterofl::{
    run_sheterofl, sheterofl_aggregate, sheterofl_local_train, SHeteroOptions, SHeteroOutcome, SlimUpdate,
};
pub use slimmable::SlimmableModel;
