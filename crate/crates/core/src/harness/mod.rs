//! Experiment configuration, seeded batch execution and metric persistence.

mod config;
mod metrics;
mod runner;

pub use config::{
    DensitySpec, ExperimentConfig, GridSpec, HighFidelitySpec, HyperSource, HyperSpec,
    LowFidelitySpec, MultiHyperSpec, SingleHyperSpec, SmlcSpec, SCHEMA_VERSION,
};
pub use metrics::{
    aggregate, format_aggregate, format_metrics, parse_metrics, read_metrics, write_aggregate,
    write_metrics, Aggregate, AggregateRow, MetricsRecord, MetricsRow, Series, Stat,
    AGGREGATE_HEADER, RUN_HEADER,
};
pub use runner::{
    compare, fit, fit_rng, initial_configuration, pin_fit, resolve_hyper, run_batch,
    run_experiment, run_rng, seed_low_fidelity, BatchResult, FitReport, Stream, THREADS_ENV,
};
