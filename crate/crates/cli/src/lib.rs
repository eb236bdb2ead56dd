//! Library side of the `lw-lab` command-line tool: experiment orchestration
//! and instance suite plumbing over the core crate.

pub mod experiment;

pub use experiment::{
    build_family, configure_threads, emit, parse_profile, random_instance, read_profile,
    run_experiment, to_csv, to_json, ExperimentConfig, ExperimentRow, InstanceSpec, Mode,
    RandomSpec, TieBreakSpec, ValuationClass,
};
