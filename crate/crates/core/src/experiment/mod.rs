//! Config-driven end-to-end runs: simulate the expert, estimate a cost, verify.

mod config;
mod noise_study;
mod run;

pub use config::{Algorithm, ExperimentConfig, ExpertSpec, NoiseSpec};
pub use noise_study::{run_noise_study, write_noise_csv, NoiseCell};
pub use run::{
    expert_gain, expert_trajectory, read_cost_estimate, read_run_report, run_experiment, run_forward, run_simulate,
    run_verify, verify_estimate, write_plot_script, ArtifactPaths, ForwardReport, RunReport, Verification,
};
