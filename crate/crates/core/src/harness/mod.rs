//! Experiment plumbing: configuration with task presets, prior datasets,
//! seeded fan-out of runs, scoring and report files.

pub mod config;
pub mod data;
pub mod run;

pub use config::{ExperimentConfig, Family, LINEAR_TASKS, TASKS};
pub use data::{load_dataset, synth_dataset, SynthKind};
pub use run::{
    ablate_init, ablate_optimizer, nfe_sweep, run_experiment, run_records, ReportRow, RunRecord,
    RunStatus,
};
