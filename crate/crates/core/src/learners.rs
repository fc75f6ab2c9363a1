//! Per-device optimizers and the synchronous iteration that couples them.
//!
//! One iteration `t -> t+1` runs, for every device `i`:
//!
//! 1. local step `theta^{t+1/2} = theta^t - alpha d^t`;
//! 2. model consensus over the network, either exact `W`-mixing or over the
//!    air, one scheduled receiver at a time;
//! 3. a fresh stochastic gradient at `theta^{t+1}`;
//! 4. for tracking variants, `d^{t+1/2} = d^t + g^{t+1} - g^t` followed by
//!    exact mixing `d^{t+1} = W d^{t+1/2}`.
//!
//! DSGD skips step 4 and keeps the raw stochastic gradient in the tracker
//! slot. Every random draw is keyed by (seed, iteration, device), so the
//! result is independent of thread count and block order.

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::channel::{self, ChannelBlockRealization, ChannelError, ChannelParams};
use crate::linalg;
use crate::problems::{FiniteSumObjective, ProblemError};
use crate::rng::{self, domain};
use crate::scheduler::Schedule;
use crate::topology::{MixingMatrix, NetworkGraph};

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Dsgd,
    Dsgt,
    DsgtVr,
}

impl Variant {
    pub fn tracks_gradient(self) -> bool {
        !matches!(self, Variant::Dsgd)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Dsgd => "dsgd",
            Variant::Dsgt => "dsgt",
            Variant::DsgtVr => "dsgt-vr",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConsensusMode {
    ErrorFree,
    AirComp(ChannelParams),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlgorithmConfig {
    pub variant: Variant,
    pub step_size: f64,
    pub max_iterations: usize,
    pub consensus: ConsensusMode,
}

impl AlgorithmConfig {
    pub fn validate(&self) -> Result<(), LearnerError> {
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(LearnerError::InvalidConfig(format!("step size {} must be positive", self.step_size)));
        }
        if self.max_iterations < 1 {
            return Err(LearnerError::InvalidConfig("at least one iteration is required".into()));
        }
        if let ConsensusMode::AirComp(params) = &self.consensus {
            params.validate()?;
        }
        Ok(())
    }
}

/// Everything a device keeps between iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceState {
    pub theta: Vec<f64>,
    /// Gradient tracker `d`. For DSGD it holds the last stochastic gradient.
    pub tracker: Vec<f64>,
    /// Most recent (variance-reduced) stochastic gradient `g`.
    pub last_grad: Vec<f64>,
    /// Per-sample gradients, populated for DSGT-VR only.
    pub table: Vec<Vec<f64>>,
    pub table_avg: Vec<f64>,
}

impl DeviceState {
    /// `theta = theta0`, `d = g = grad f_i(theta0)`; the DSGT-VR table holds
    /// every per-sample gradient at `theta0`.
    pub fn init<P: FiniteSumObjective + ?Sized>(
        problem: &P,
        device: usize,
        theta0: &[f64],
        variant: Variant,
    ) -> Result<Self, LearnerError> {
        let dim = problem.dim();
        if theta0.len() != dim {
            return Err(LearnerError::DimensionMismatch { expected: dim, got: theta0.len() });
        }
        if device >= problem.n_devices() {
            return Err(ProblemError::DeviceOutOfRange { device, n_devices: problem.n_devices() }.into());
        }
        let m = problem.local_len(device);
        if m == 0 {
            return Err(ProblemError::EmptyDataset(device).into());
        }
        let (table, full) = if variant == Variant::DsgtVr {
            let table: Vec<Vec<f64>> = (0..m)
                .map(|j| {
                    let mut g = vec![0.0; dim];
                    problem.sample_grad_into(device, j, theta0, &mut g);
                    g
                })
                .collect();
            let avg = linalg::mean_of(&table);
            (table, avg)
        } else {
            (Vec::new(), problem.local_grad(device, theta0))
        };
        Ok(Self {
            theta: theta0.to_vec(),
            tracker: full.clone(),
            last_grad: full.clone(),
            table_avg: if variant == Variant::DsgtVr { full } else { Vec::new() },
            table,
        })
    }

    /// `theta - alpha * d`.
    pub fn local_step(&self, alpha: f64) -> Vec<f64> {
        let mut half = self.theta.clone();
        linalg::axpy(-alpha, &self.tracker, &mut half);
        half
    }

    /// `d + g_new - g_old`, storing `g_new` as the last gradient.
    pub fn tracker_half(&mut self, new_grad: Vec<f64>) -> Result<Vec<f64>, LearnerError> {
        if new_grad.len() != self.tracker.len() {
            return Err(LearnerError::DimensionMismatch { expected: self.tracker.len(), got: new_grad.len() });
        }
        let half = self
            .tracker
            .iter()
            .zip(&new_grad)
            .zip(&self.last_grad)
            .map(|((d, g_new), g_old)| d + g_new - g_old)
            .collect();
        self.last_grad = new_grad;
        Ok(half)
    }
}

/// SAGA estimate `grad f_xi(theta) - table[xi] + table_avg` at the state's
/// current model; then `table[xi]` is replaced and the average updated in
/// place.
pub fn vr_gradient<P: FiniteSumObjective + ?Sized>(
    state: &mut DeviceState,
    device: usize,
    sample: usize,
    problem: &P,
) -> Result<Vec<f64>, LearnerError> {
    let m = state.table.len();
    if sample >= m {
        return Err(ProblemError::SampleOutOfRange { device, sample, len: m }.into());
    }
    let mut fresh = vec![0.0; state.theta.len()];
    problem.sample_grad_into(device, sample, &state.theta, &mut fresh);
    let stale = std::mem::replace(&mut state.table[sample], fresh);
    let fresh = &state.table[sample];
    let inv_m = 1.0 / m as f64;
    let g = fresh.iter().zip(&stale).zip(&state.table_avg).map(|((f, s), a)| f - s + a).collect();
    for ((a, f), s) in state.table_avg.iter_mut().zip(fresh).zip(&stale) {
        *a += (f - s) * inv_m;
    }
    Ok(g)
}

/// `d_i = sum_j w_ij half_j` for every device.
pub fn mix_trackers(mixing: &MixingMatrix, halves: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, LearnerError> {
    if halves.len() != mixing.n_devices() {
        return Err(LearnerError::DimensionMismatch { expected: mixing.n_devices(), got: halves.len() });
    }
    if let Some(first) = halves.first() {
        if let Some(bad) = halves.iter().find(|h| h.len() != first.len()) {
            return Err(LearnerError::DimensionMismatch { expected: first.len(), got: bad.len() });
        }
    }
    Ok(mixing.apply(halves))
}

/// Communication structure shared by every device.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub graph: NetworkGraph,
    pub mixing: MixingMatrix,
    pub schedule: Schedule,
}

impl Network {
    pub fn new(graph: NetworkGraph, mixing: MixingMatrix, schedule: Schedule) -> Result<Self, LearnerError> {
        if mixing.n_devices() != graph.n_devices() || !mixing.is_supported_on(&graph) {
            return Err(LearnerError::InvalidConfig("mixing matrix is not supported on the graph".into()));
        }
        if !schedule.is_valid_for(&graph) {
            return Err(LearnerError::InvalidConfig("schedule violates the interference constraint".into()));
        }
        Ok(Self { graph, mixing, schedule })
    }

    pub fn n_devices(&self) -> usize {
        self.graph.n_devices()
    }
}

/// Channel statistics of one iteration. All zero for error-free consensus.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IterationReport {
    /// Mean `||z~_i||^2` over receivers that heard at least one neighbor.
    pub noise_energy: f64,
    /// Mean `sqrt(p)` over the same receivers.
    pub scaling_factor: f64,
    pub max_tx_power: f64,
    pub blocks: usize,
}

/// Draws the sample index `xi_i^t`.
pub fn sample_index(seed: u64, iteration: u64, device: usize, local_len: usize) -> usize {
    rng::substream(seed, &[domain::SAMPLE, iteration, device as u64]).random_range(0..local_len)
}

fn consensus(
    halves: &[Vec<f64>],
    network: &Network,
    mode: &ConsensusMode,
    iteration: u64,
    seed: u64,
) -> Result<(Vec<Vec<f64>>, IterationReport), LearnerError> {
    let params = match mode {
        ConsensusMode::ErrorFree => return Ok((network.mixing.apply(halves), IterationReport::default())),
        ConsensusMode::AirComp(params) => params,
    };
    for h in halves {
        if h.len() != params.dimension {
            return Err(LearnerError::DimensionMismatch { expected: params.dimension, got: h.len() });
        }
    }
    let realization = ChannelBlockRealization::draw(&network.graph, params.gain_threshold, seed, iteration);
    let mut outcomes: Vec<Option<channel::AirCompOutcome>> = vec![None; network.n_devices()];
    // Receivers sharing a block are independent; blocks run in schedule order.
    for block in network.schedule.blocks() {
        let done: Vec<_> = block
            .par_iter()
            .map(|&i| {
                let mut noise_rng = rng::substream(seed, &[domain::NOISE, iteration, i as u64]);
                channel::aircomp_receive(realization.receiver(i), halves, &network.mixing, params, &mut noise_rng)
            })
            .collect::<Result<_, _>>()?;
        for (&i, outcome) in block.iter().zip(done) {
            outcomes[i] = Some(outcome);
        }
    }
    // Statistics are reduced in device order so the schedule cannot change them.
    let mut out = Vec::with_capacity(outcomes.len());
    let mut noise = 0.0;
    let mut scaling = 0.0;
    let mut heard = 0usize;
    let mut max_tx_power = 0.0f64;
    for outcome in outcomes {
        let outcome = outcome.expect("every device is scheduled");
        if let Some(s) = outcome.scaling {
            noise += outcome.noise_energy;
            scaling += s.value();
            heard += 1;
        }
        max_tx_power = max_tx_power.max(outcome.max_tx_power);
        out.push(outcome.theta);
    }
    let denom = heard.max(1) as f64;
    Ok((
        out,
        IterationReport {
            noise_energy: noise / denom,
            scaling_factor: scaling / denom,
            max_tx_power,
            blocks: network.schedule.n_blocks(),
        },
    ))
}

/// Advances every device from iteration `iteration` to `iteration + 1`.
pub fn run_iteration<P: FiniteSumObjective + ?Sized>(
    states: &mut [DeviceState],
    problem: &P,
    network: &Network,
    config: &AlgorithmConfig,
    iteration: u64,
    seed: u64,
) -> Result<IterationReport, LearnerError> {
    let n = network.n_devices();
    if states.len() != n || problem.n_devices() != n {
        return Err(LearnerError::DimensionMismatch { expected: n, got: states.len().min(problem.n_devices()) });
    }
    let alpha = config.step_size;
    let halves: Vec<Vec<f64>> = states.par_iter().map(|s| s.local_step(alpha)).collect();
    let (mixed, report) = consensus(&halves, network, &config.consensus, iteration, seed)?;

    let variant = config.variant;
    let tracker_halves: Vec<Vec<f64>> = states
        .par_iter_mut()
        .zip(mixed)
        .enumerate()
        .map(|(i, (state, theta))| {
            state.theta = theta;
            let xi = sample_index(seed, iteration, i, problem.local_len(i));
            let grad = match variant {
                Variant::DsgtVr => vr_gradient(state, i, xi, problem)?,
                Variant::Dsgd | Variant::Dsgt => {
                    let mut g = vec![0.0; state.theta.len()];
                    problem.sample_grad_into(i, xi, &state.theta, &mut g);
                    g
                }
            };
            if variant.tracks_gradient() {
                state.tracker_half(grad)
            } else {
                state.tracker = grad.clone();
                state.last_grad = grad;
                Ok(Vec::new())
            }
        })
        .collect::<Result<_, LearnerError>>()?;

    if variant.tracks_gradient() {
        let mixed = mix_trackers(&network.mixing, &tracker_halves)?;
        for (state, d) in states.iter_mut().zip(mixed) {
            state.tracker = d;
        }
    }
    Ok(report)
}

/// A population of devices running one algorithm on one problem.
pub struct Learner<'a, P: FiniteSumObjective + ?Sized> {
    problem: &'a P,
    network: &'a Network,
    config: AlgorithmConfig,
    seed: u64,
    states: Vec<DeviceState>,
    iteration: u64,
}

impl<'a, P: FiniteSumObjective + ?Sized> Learner<'a, P> {
    /// All devices start from the zero model.
    pub fn new(problem: &'a P, network: &'a Network, config: AlgorithmConfig, seed: u64) -> Result<Self, LearnerError> {
        Self::with_initial(problem, network, config, seed, &vec![0.0; problem.dim()])
    }

    pub fn with_initial(
        problem: &'a P,
        network: &'a Network,
        config: AlgorithmConfig,
        seed: u64,
        theta0: &[f64],
    ) -> Result<Self, LearnerError> {
        config.validate()?;
        if problem.n_devices() != network.n_devices() {
            return Err(LearnerError::InvalidConfig(format!(
                "problem has {} devices, network has {}",
                problem.n_devices(),
                network.n_devices()
            )));
        }
        if let ConsensusMode::AirComp(params) = &config.consensus {
            if params.dimension != problem.dim() {
                return Err(LearnerError::DimensionMismatch { expected: problem.dim(), got: params.dimension });
            }
        }
        let states = (0..problem.n_devices())
            .into_par_iter()
            .map(|i| DeviceState::init(problem, i, theta0, config.variant))
            .collect::<Result<_, _>>()?;
        Ok(Self { problem, network, config, seed, states, iteration: 0 })
    }

    pub fn states(&self) -> &[DeviceState] {
        &self.states
    }

    pub fn models(&self) -> Vec<&[f64]> {
        self.states.iter().map(|s| s.theta.as_slice()).collect()
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn config(&self) -> &AlgorithmConfig {
        &self.config
    }

    pub fn set_step_size(&mut self, alpha: f64) -> Result<(), LearnerError> {
        let mut next = self.config;
        next.step_size = alpha;
        next.validate()?;
        self.config = next;
        Ok(())
    }

    pub fn step(&mut self) -> Result<IterationReport, LearnerError> {
        let report =
            run_iteration(&mut self.states, self.problem, self.network, &self.config, self.iteration, self.seed)?;
        self.iteration += 1;
        Ok(report)
    }
}
