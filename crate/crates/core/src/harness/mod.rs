//! Experiment orchestration: configs, training, evaluation, compute
//! accounting, affinity and sweeps.

pub mod ablate;
pub mod affinity;
pub mod config;
pub mod eval;
pub mod flops;
pub mod optim;
pub mod runlog;
pub mod train;

pub use ablate::{ablate, SweepRun};
pub use affinity::{
    affinity, aggregate, compute_to_target, default_threshold, run_compute_to_target, AffinityReport,
    ComputeToTarget, Direction, Threshold, run_cost, task_affinity,
};
pub use config::{expand_sweep, parse_kv, preset, RunConfig, PRESETS};
pub use eval::{evaluate, primary_metric, problem_for, Metrics};
pub use flops::{forward_flops, forward_macs, profile_step_flops};
pub use optim::{AdamW, AdamWConfig};
pub use runlog::{read_records, to_csv, RunRecord};
pub use train::{checkpoint_run_config, load_data, train, Data, TrainOptions, TrainOutcome};
