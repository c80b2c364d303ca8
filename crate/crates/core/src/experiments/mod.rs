//! Instance builders, experiment drivers and their file formats.

pub mod counterexample;
pub mod instance_file;
pub mod instances;
pub mod stats;
pub mod sweep;

pub use counterexample::{run_counterexample, CounterexampleReport};
pub use instance_file::InstanceFile;
pub use instances::{
    build_appendix_d_instance, build_example_27_instance, build_realizable_family,
    build_realizable_family_with, optimal_policy, CounterexampleParams, FamilyParams,
};
pub use stats::fit_loglog_slope;
pub use sweep::{run_beta_sweep, run_rate_experiment, Family, RateConfig, SweepResult};
