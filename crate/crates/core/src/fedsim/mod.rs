//! Federated protocol engine: budgets, local training, aggregation and the
//! Split-Mix server loop.

pub mod aggregate;
pub mod budget;
pub mod client;
pub mod eval;
pub mod schedule;
pub mod server;
pub mod train;

pub use aggregate::{weighted_mean, AggregationAccumulator, Contribution};
pub use budget::{assign_budgets, quantize_budget, BudgetDistribution, Layout};
pub use client::{build_clients, ClientSpec};
pub use eval::{evaluate_model, evaluate_widths, LocalStats, Split, WidthAccuracy};
pub use schedule::{LrSchedule, TrainingSchedule};
pub use server::{
    finalize_stats, post_average_federated, post_average_model, run_splitmix, select_participants, RoundRecord, SplitMixOptions,
    SplitMixOutcome, SplitMixServer,
};
pub use train::{check_budget, local_stream, local_train, train_model, LocalConfig, LocalRule};
