//! Block flat-fading D2D channel and over-the-air consensus.
//!
//! A receiving device `i` collects the superposition of its neighbors'
//! precoded models in one transmission block. Each sender inverts its own
//! channel and applies the receiver-wide scaling factor `sqrt(p)`, so the
//! receiver sees `sqrt(p) * sum_j w_ij theta_j` plus noise and decodes by
//! dividing by `sqrt(p)` and adding its own `w_ii * theta_i`.
//!
//! Model parameters are real. After channel inversion the signal term is
//! real, so the decoder keeps the in-phase branch. The in-phase receiver
//! noise carries the full variance `sigma^2` per slot, giving decoded noise of
//! variance `sigma^2 / p` per component.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use thiserror::Error;

use crate::linalg;
use crate::rng::{self, domain};
use crate::topology::{MixingMatrix, NetworkGraph};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("invalid channel parameters: {0}")]
    InvalidParams(String),
    #[error("receiver {receiver} has no transmitting neighbors")]
    EmptyNeighborhood { receiver: usize },
    #[error("zero channel coefficient cannot be inverted")]
    ZeroCoefficient,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("transmission {sender}->{receiver} uses power {power} above the peak {limit}")]
    PeakPowerExceeded { sender: usize, receiver: usize, power: f64, limit: f64 },
}

/// Converts a power level in dBm to the simulator's normalized linear scale
/// (0 dBm is 1.0).
pub fn dbm_to_linear(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParams {
    /// Receiver noise power `sigma^2`, linear.
    pub noise_power: f64,
    /// Peak transmit power `P`.
    pub peak_power: f64,
    /// Gain threshold `gamma`; every fading draw satisfies `|h| > gamma`.
    pub gain_threshold: f64,
    /// Slots per block, equal to the model dimension.
    pub dimension: usize,
}

impl ChannelParams {
    pub fn new(noise_power: f64, peak_power: f64, gain_threshold: f64, dimension: usize) -> Result<Self, ChannelError> {
        let p = Self { noise_power, peak_power, gain_threshold, dimension };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        if !(self.peak_power > 0.0) || !self.peak_power.is_finite() {
            return Err(ChannelError::InvalidParams(format!("peak power must be positive, got {}", self.peak_power)));
        }
        if !(self.noise_power >= 0.0) || !self.noise_power.is_finite() {
            return Err(ChannelError::InvalidParams(format!("noise power must be >= 0, got {}", self.noise_power)));
        }
        if !(self.gain_threshold >= 0.0) || !self.gain_threshold.is_finite() {
            return Err(ChannelError::InvalidParams(format!(
                "gain threshold must be >= 0, got {}",
                self.gain_threshold
            )));
        }
        if self.dimension == 0 {
            return Err(ChannelError::InvalidParams("dimension must be positive".into()));
        }
        Ok(())
    }

    /// Worst-case decoded noise energy `d sigma^2 B^2 / (gamma^2 P)` for models
    /// bounded by `bound` in norm.
    pub fn noise_energy_bound(&self, bound: f64) -> f64 {
        self.dimension as f64 * self.noise_power * bound * bound
            / (self.gain_threshold * self.gain_threshold * self.peak_power)
    }
}

/// Draws `h ~ CN(0, 1)` conditioned on `|h| > threshold` by rejection.
pub fn conditioned_fading<R: Rng + ?Sized>(threshold: f64, rng: &mut R) -> Complex64 {
    let half = std::f64::consts::FRAC_1_SQRT_2;
    loop {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        let h = Complex64::new(re * half, im * half);
        if h.norm() > threshold {
            return h;
        }
    }
}

/// Fading coefficients `h_ij` seen by one receiver `i`, one per neighbor `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverBlock {
    receiver: usize,
    links: Vec<(usize, Complex64)>,
}

impl ReceiverBlock {
    pub fn new(receiver: usize, links: Vec<(usize, Complex64)>) -> Self {
        Self { receiver, links }
    }

    pub fn draw<R: Rng + ?Sized>(graph: &NetworkGraph, receiver: usize, threshold: f64, rng: &mut R) -> Self {
        let links = graph.neighbors(receiver).iter().map(|&j| (j, conditioned_fading(threshold, rng))).collect();
        Self { receiver, links }
    }

    pub fn receiver(&self) -> usize {
        self.receiver
    }

    /// `(sender, h_receiver_sender)` pairs.
    pub fn links(&self) -> &[(usize, Complex64)] {
        &self.links
    }

    pub fn coefficient(&self, sender: usize) -> Option<Complex64> {
        self.links.iter().find(|(j, _)| *j == sender).map(|&(_, h)| h)
    }
}

/// Fading for every ordered edge in one consensus iteration.
///
/// Coefficients are drawn independently per ordered pair (no reciprocity),
/// from a stream keyed by `(seed, iteration, receiver)`. The key never
/// involves the transmission block index, so the scheduling policy cannot
/// change the draws.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelBlockRealization {
    receivers: Vec<ReceiverBlock>,
}

impl ChannelBlockRealization {
    pub fn draw(graph: &NetworkGraph, threshold: f64, seed: u64, iteration: u64) -> Self {
        let receivers = (0..graph.n_devices())
            .map(|i| {
                let mut rng = rng::substream(seed, &[domain::FADING, iteration, i as u64]);
                ReceiverBlock::draw(graph, i, threshold, &mut rng)
            })
            .collect();
        Self { receivers }
    }

    pub fn receiver(&self, i: usize) -> &ReceiverBlock {
        &self.receivers[i]
    }

    pub fn coefficient(&self, receiver: usize, sender: usize) -> Option<Complex64> {
        self.receivers.get(receiver)?.coefficient(sender)
    }
}

/// Receiver-wide amplitude scaling `sqrt(p)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct ScalingFactor(f64);

impl ScalingFactor {
    pub fn new(value: f64) -> Self {
        assert!(value > 0.0 && value.is_finite(), "scaling factor must be positive and finite");
        Self(value)
    }

    /// `sqrt(p)`
    pub fn value(self) -> f64 {
        self.0
    }

    /// `p`
    pub fn power(self) -> f64 {
        self.0 * self.0
    }
}

/// `sqrt(p) = min_j |h_ij| sqrt(P) / ||theta_j||` over the transmitting
/// neighbors of the block's receiver. Zero models transmit nothing and are
/// left out of the minimum; if every model is zero the factor falls back to
/// `sqrt(P) / gamma` (or `sqrt(P)` when `gamma` is zero).
///
/// `models` is indexed by device id.
pub fn compute_scaling(
    block: &ReceiverBlock,
    models: &[Vec<f64>],
    params: &ChannelParams,
) -> Result<ScalingFactor, ChannelError> {
    if block.links.is_empty() {
        return Err(ChannelError::EmptyNeighborhood { receiver: block.receiver });
    }
    let sqrt_p = params.peak_power.sqrt();
    let mut best: Option<(f64, f64, f64)> = None; // (scale, |h|, ||theta||)
    for &(j, h) in &block.links {
        let model = &models[j];
        if model.len() != params.dimension {
            return Err(ChannelError::DimensionMismatch { expected: params.dimension, got: model.len() });
        }
        let gain = h.norm();
        if gain == 0.0 {
            return Err(ChannelError::ZeroCoefficient);
        }
        let size = linalg::norm(model);
        if size == 0.0 {
            continue;
        }
        let scale = gain * sqrt_p / size;
        if best.map_or(true, |(s, _, _)| scale < s) {
            best = Some((scale, gain, size));
        }
    }
    let value = match best {
        Some((mut scale, gain, size)) => {
            // Rounding may leave the limiting sender one ulp above P.
            while (scale * size / gain).powi(2) > params.peak_power {
                scale = scale.next_down();
            }
            scale
        }
        None if params.gain_threshold > 0.0 => sqrt_p / params.gain_threshold,
        None => sqrt_p,
    };
    Ok(ScalingFactor::new(value))
}

/// Channel-inverting precoder `x = sqrt(p) w_ij h^* / |h|^2 theta_j`.
pub fn precode(
    model: &[f64],
    weight: f64,
    coeff: Complex64,
    scaling: ScalingFactor,
) -> Result<Vec<Complex64>, ChannelError> {
    let gain_sq = coeff.norm_sqr();
    if gain_sq == 0.0 {
        return Err(ChannelError::ZeroCoefficient);
    }
    let factor = coeff.conj() * (scaling.value() * weight / gain_sq);
    Ok(model.iter().map(|&t| factor * t).collect())
}

/// Result of decoding one receiver's block.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub theta: Vec<f64>,
    /// `||z~||^2`, the energy of the decoded noise.
    pub noise_energy: f64,
}

/// Superposes `h_ij x_j` over the air, adds receiver noise and decodes
/// `Re(y) / sqrt(p) + w_ii theta_i`.
pub fn superpose_and_decode<R: Rng + ?Sized>(
    transmissions: &[(Complex64, Vec<Complex64>)],
    own_model: &[f64],
    self_weight: f64,
    scaling: ScalingFactor,
    params: &ChannelParams,
    rng: &mut R,
) -> Result<Decoded, ChannelError> {
    let dim = own_model.len();
    if dim != params.dimension {
        return Err(ChannelError::DimensionMismatch { expected: params.dimension, got: dim });
    }
    let mut received = vec![Complex64::new(0.0, 0.0); dim];
    for (h, x) in transmissions {
        if x.len() != dim {
            return Err(ChannelError::DimensionMismatch { expected: dim, got: x.len() });
        }
        for (y, &xk) in received.iter_mut().zip(x) {
            *y += h * xk;
        }
    }
    let mut noise_sq = 0.0;
    if params.noise_power > 0.0 {
        let noise =
            Normal::new(0.0, params.noise_power.sqrt()).map_err(|e| ChannelError::InvalidParams(e.to_string()))?;
        for y in &mut received {
            let z: f64 = noise.sample(rng);
            y.re += z;
            noise_sq += z * z;
        }
    }
    let inv = 1.0 / scaling.value();
    let theta = received.iter().zip(own_model).map(|(y, &own)| y.re * inv + self_weight * own).collect::<Vec<_>>();
    let noise_energy = noise_sq * inv * inv;
    Ok(Decoded { theta, noise_energy })
}

/// Outcome of one receiver's over-the-air consensus.
#[derive(Debug, Clone, PartialEq)]
pub struct AirCompOutcome {
    pub theta: Vec<f64>,
    pub noise_energy: f64,
    /// `None` when the receiver has no neighbors and nothing was sent.
    pub scaling: Option<ScalingFactor>,
    /// Largest `||x_j||^2` among the block's transmissions.
    pub max_tx_power: f64,
}

/// Full precode, superpose and decode pipeline for `block.receiver()`.
/// Fails if any transmission would exceed the peak power.
pub fn aircomp_receive<R: Rng + ?Sized>(
    block: &ReceiverBlock,
    models: &[Vec<f64>],
    mixing: &MixingMatrix,
    params: &ChannelParams,
    rng: &mut R,
) -> Result<AirCompOutcome, ChannelError> {
    let i = block.receiver();
    let own = &models[i];
    if block.links().is_empty() {
        return Ok(AirCompOutcome {
            theta: own.iter().map(|t| mixing.self_weight(i) * t).collect(),
            noise_energy: 0.0,
            scaling: None,
            max_tx_power: 0.0,
        });
    }
    let scaling = compute_scaling(block, models, params)?;
    let mut max_tx_power = 0.0f64;
    let mut transmissions = Vec::with_capacity(block.links().len());
    for &(j, h) in block.links() {
        let x = precode(&models[j], mixing.weight(i, j), h, scaling)?;
        let power: f64 = x.iter().map(Complex64::norm_sqr).sum();
        if power > params.peak_power {
            return Err(ChannelError::PeakPowerExceeded { sender: j, receiver: i, power, limit: params.peak_power });
        }
        max_tx_power = max_tx_power.max(power);
        transmissions.push((h, x));
    }
    let decoded = superpose_and_decode(&transmissions, own, mixing.self_weight(i), scaling, params, rng)?;
    Ok(AirCompOutcome {
        theta: decoded.theta,
        noise_energy: decoded.noise_energy,
        scaling: Some(scaling),
        max_tx_power,
    })
}
