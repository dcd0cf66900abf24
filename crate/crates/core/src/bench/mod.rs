//! Experiment harness: config files, runs, result files, reports and the
//! command-line front end.

pub mod cli;
pub mod config;
pub mod output;
pub mod report;
pub mod run;

pub use config::{
    apply_override, ArchitectureConfig, BaselineConfig, BaselineKind, DatasetConfig, ExperimentConfig, PartitionConfig,
    PartitionKind, RobustnessConfig, SplitMixConfig, OUTPUT_DIR_ENV,
};
pub use output::{method_dir, write_bundle, SCHEMA_VERSION};
pub use report::render_report;
pub use run::{prepare, run_experiment, DomainRow, FinalRow, MethodResult, Prepared, ResultsBundle, RoundRow};
