//! Experiment configuration, orchestration, metrics and the convergence
//! envelope.

pub mod bound;
pub mod config;
pub mod experiment;
pub mod metrics;

use thiserror::Error;

use crate::channel::ChannelError;
use crate::learners::LearnerError;
use crate::problems::ProblemError;
use crate::topology::TopologyError;

pub use bound::{analytic_step_size, compute_c, evaluate_bound, fit_rho, ConvergenceEnvelope, RateFit};
pub use config::{ConsensusKind, DatasetKind, ExperimentConfig, StepSize, TopologyKind};
pub use experiment::{run_experiment, run_single, run_with_setup, ExperimentOutput, RunTrace, Setup, Summary};
pub use metrics::{average_runs, read_csv, write_csv, MetricsRecord};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("metrics: {0}")]
    Metrics(String),
    #[error("bound: {0}")]
    Bound(String),
    #[error("diverged at iteration {iteration} (gap {gap:e}) with step size {step_size:e}; try {suggested:e}")]
    Diverged { iteration: u64, gap: f64, step_size: f64, suggested: f64, records: Vec<MetricsRecord> },
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
