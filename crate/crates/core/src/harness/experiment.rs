use rayon::prelude::*;

use super::bound::analytic_step_size;
use super::config::{ConsensusKind, DatasetKind, ExperimentConfig, StepSize, TopologyKind};
use super::metrics::{average_runs, MetricsRecord};
use super::HarnessError;
use crate::learners::{AlgorithmConfig, ConsensusMode, IterationReport, Learner, LearnerError, Network};
use crate::linalg;
use crate::problems::{
    idx, partition, solve_centralized, FiniteSumObjective, LocalDataset, LogisticProblem, Optimum, SyntheticSpec,
    DEFAULT_ORACLE_TOLERANCE,
};
use crate::rng::{self, domain};
use crate::scheduler::Schedule;
use crate::topology::{laplacian_mixing, NetworkGraph};

/// Runs are aborted once any device's gap exceeds this.
pub const DIVERGENCE_GAP: f64 = 1e12;
/// Consecutive gap increases that trigger a step-size halving in auto mode.
pub const BACKOFF_WINDOW: usize = 50;
const MAX_GRAPH_DRAWS: usize = 10_000;

/// Problem, held-out data, network and optimum shared by all repetitions.
#[derive(Debug, Clone)]
pub struct Setup {
    pub problem: LogisticProblem,
    pub test: LocalDataset,
    pub network: Network,
    pub optimum: Optimum,
    /// Initial step size after resolving `auto`.
    pub step_size: f64,
}

impl Setup {
    pub fn build(config: &ExperimentConfig) -> Result<Self, HarnessError> {
        config.validate()?;
        let (problem, test) = load_problem(config)?;
        let graph = build_graph(config)?;
        let mixing = laplacian_mixing(&graph)?;
        let schedule = Schedule::build(&graph, config.schedule);
        let network = Network::new(graph, mixing, schedule)?;
        let optimum = solve_centralized(&problem, DEFAULT_ORACLE_TOLERANCE)?;
        let step_size = match config.step_size {
            StepSize::Fixed(a) => a,
            StepSize::Auto => analytic_step_size(
                problem.strong_convexity(),
                problem.smoothness(),
                network.mixing.beta(),
                problem.min_local_len(),
                problem.max_local_len(),
            ),
        };
        Ok(Self { problem, test, network, optimum, step_size })
    }

    pub fn algorithm(&self, config: &ExperimentConfig) -> Result<AlgorithmConfig, HarnessError> {
        let consensus = match config.consensus {
            ConsensusKind::ErrorFree => ConsensusMode::ErrorFree,
            ConsensusKind::AirComp => ConsensusMode::AirComp(config.channel(self.problem.dim())?),
        };
        Ok(AlgorithmConfig {
            variant: config.variant,
            step_size: self.step_size,
            max_iterations: config.iterations.max(1),
            consensus,
        })
    }
}

pub fn load_problem(config: &ExperimentConfig) -> Result<(LogisticProblem, LocalDataset), HarnessError> {
    let (train, test) = match config.dataset {
        DatasetKind::Synthetic => {
            let spec = SyntheticSpec {
                train_samples: config.samples,
                test_samples: config.test_samples,
                dimension: config.dimension,
                flip_rate: config.flip_rate,
                seed: config.data_seed.unwrap_or(config.seed),
            };
            let (train, test, _) = spec.generate()?;
            (train, test)
        }
        DatasetKind::Idx => {
            let (Some(images), Some(labels)) = (&config.images, &config.labels) else {
                return Err(HarnessError::Config("idx dataset needs image and label paths".into()));
            };
            idx::load_idx_binary_pair(images, labels, config.class_a, config.class_b, config.train, config.test)?
        }
    };
    let parts = partition(&train, config.devices, config.per_device)?;
    Ok((LogisticProblem::new(parts, config.lambda)?, test))
}

/// Communication graph, drawn from the master seed's topology stream.
pub fn build_graph(config: &ExperimentConfig) -> Result<NetworkGraph, HarnessError> {
    let n = config.devices;
    let mut rng = rng::substream(config.seed, &[domain::TOPOLOGY]);
    let graph = match config.topology {
        TopologyKind::Threshold => {
            NetworkGraph::rayleigh_threshold(n, config.gain_threshold, &mut rng, MAX_GRAPH_DRAWS)?
        }
        TopologyKind::Ring => NetworkGraph::ring(n)?,
        TopologyKind::Path => NetworkGraph::path(n)?,
        TopologyKind::Complete => NetworkGraph::complete(n)?,
        TopologyKind::ErdosRenyi => {
            NetworkGraph::connected_erdos_renyi(n, config.edge_probability, &mut rng, MAX_GRAPH_DRAWS)?
        }
    };
    Ok(graph)
}

/// Metrics of the current device models.
fn snapshot(
    setup: &Setup,
    models: &[&[f64]],
    iteration: u64,
    report: &IterationReport,
    max_norm: &mut f64,
) -> MetricsRecord {
    let problem = &setup.problem;
    let device_gaps: Vec<f64> = models.par_iter().map(|m| problem.global_loss(m) - setup.optimum.value).collect();
    let n = models.len() as f64;
    let mean_gap = device_gaps.iter().sum::<f64>() / n;
    let mut mean = vec![0.0; problem.dim()];
    for m in models {
        linalg::axpy(1.0 / n, m, &mut mean);
    }
    let consensus_error = models.iter().map(|m| linalg::dist_sq(m, &mean)).sum::<f64>() / n;
    *max_norm = models.iter().map(|m| linalg::norm(m)).fold(*max_norm, f64::max);
    MetricsRecord {
        iteration,
        mean_gap,
        device_gaps,
        consensus_error,
        test_accuracy: setup.test.accuracy(&mean),
        max_theta_norm: *max_norm,
        block_noise_energy: report.noise_energy,
        scaling_factor: report.scaling_factor,
        blocks: setup.network.schedule.n_blocks(),
    }
}

/// One repetition: the full trace plus the final step size.
#[derive(Debug, Clone)]
pub struct RunTrace {
    pub records: Vec<MetricsRecord>,
    pub final_step_size: f64,
}

/// Runs a single repetition seeded with `run_seed`.
pub fn run_single(setup: &Setup, config: &ExperimentConfig, run_seed: u64) -> Result<RunTrace, HarnessError> {
    let algorithm = setup.algorithm(config)?;
    let mut learner = Learner::new(&setup.problem, &setup.network, algorithm, run_seed)?;
    let blocks = setup.network.schedule.n_blocks();
    let mut max_norm = 0.0;
    let idle = IterationReport { blocks, ..Default::default() };
    let first = snapshot(setup, &learner.models(), 0, &idle, &mut max_norm);
    let mut last_gap = first.mean_gap;
    let mut records = vec![first];
    let mut rising = 0usize;
    let total = config.iterations as u64;
    for t in 1..=total {
        let report = learner.step()?;
        max_norm = learner.models().iter().map(|m| linalg::norm(m)).fold(max_norm, f64::max);
        let keep = t % config.record_every as u64 == 0 || t == total;
        let auto = config.step_size == StepSize::Auto;
        if !(keep || auto) {
            continue;
        }
        let rec = snapshot(setup, &learner.models(), t, &report, &mut max_norm);
        let worst = rec.device_gaps.iter().copied().fold(rec.mean_gap, f64::max);
        if !(worst <= DIVERGENCE_GAP) {
            let step = learner.config().step_size;
            return Err(HarnessError::Diverged {
                iteration: t,
                gap: worst,
                step_size: step,
                suggested: step / 2.0,
                records,
            });
        }
        if auto {
            rising = if rec.mean_gap > last_gap { rising + 1 } else { 0 };
            if rising >= BACKOFF_WINDOW {
                let halved = learner.config().step_size / 2.0;
                learner.set_step_size(halved).map_err(LearnerError::from)?;
                rising = 0;
            }
        }
        last_gap = rec.mean_gap;
        if keep {
            records.push(rec);
        }
    }
    Ok(RunTrace { records, final_step_size: learner.config().step_size })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub n_devices: usize,
    pub dimension: usize,
    pub lambda: f64,
    pub smoothness: f64,
    pub beta: f64,
    pub blocks: usize,
    pub optimum_value: f64,
    pub step_size: f64,
    pub final_gap: f64,
    /// Mean gap over the last fifth of the recorded iterations.
    pub plateau_gap: f64,
    pub final_accuracy: f64,
    pub max_theta_norm: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    /// Repetition-averaged trace.
    pub records: Vec<MetricsRecord>,
    pub summary: Summary,
}

/// Mean of `mean_gap` over the last fifth of the records (at least one).
pub fn plateau(records: &[MetricsRecord]) -> f64 {
    let k = (records.len() / 5).max(1);
    let tail = &records[records.len().saturating_sub(k)..];
    tail.iter().map(|r| r.mean_gap).sum::<f64>() / tail.len() as f64
}

/// Builds the setup and runs every repetition.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput, HarnessError> {
    let setup = Setup::build(config)?;
    run_with_setup(&setup, config)
}

/// Runs all repetitions in parallel and averages them in repetition order.
pub fn run_with_setup(setup: &Setup, config: &ExperimentConfig) -> Result<ExperimentOutput, HarnessError> {
    let runs: Vec<RunTrace> = (0..config.repetitions)
        .into_par_iter()
        .map(|r| run_single(setup, config, rng::repetition_seed(config.seed, r)))
        .collect::<Result<_, _>>()?;
    let traces: Vec<Vec<MetricsRecord>> = runs.into_iter().map(|r| r.records).collect();
    let records = average_runs(&traces)?;
    let last = records.last().expect("at least the initial record");
    let summary = Summary {
        n_devices: setup.problem.n_devices(),
        dimension: setup.problem.dim(),
        lambda: setup.problem.lambda(),
        smoothness: setup.problem.smoothness(),
        beta: setup.network.mixing.beta(),
        blocks: setup.network.schedule.n_blocks(),
        optimum_value: setup.optimum.value,
        step_size: setup.step_size,
        final_gap: last.mean_gap,
        plateau_gap: plateau(&records),
        final_accuracy: last.test_accuracy,
        max_theta_norm: last.max_theta_norm,
    };
    Ok(ExperimentOutput { records, summary })
}
