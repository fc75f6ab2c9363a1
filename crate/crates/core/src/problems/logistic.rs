//! L2-regularized logistic regression and its centralized solver.
//!
//! `f_ij(theta) = log(1 + exp(-b_ij a_ij . theta)) + (lambda/2) ||theta||^2`.

use rayon::prelude::*;

use super::{FiniteSumObjective, LocalDataset, ProblemError};
use crate::linalg;

/// Gradient-norm target for the optimality oracle.
pub const DEFAULT_ORACLE_TOLERANCE: f64 = 1e-13;

const MAX_SOLVER_ITERATIONS: usize = 200_000;

/// `log(1 + exp(-z))` without overflow.
#[inline]
fn log1p_exp_neg(z: f64) -> f64 {
    if z > 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

/// `1 / (1 + exp(z))`, the logistic function at `-z`.
#[inline]
fn sigmoid_neg(z: f64) -> f64 {
    if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

#[derive(Debug, Clone)]
pub struct LogisticProblem {
    devices: Vec<LocalDataset>,
    lambda: f64,
    dim: usize,
}

impl LogisticProblem {
    /// `lambda = None` selects `1 / sum_i m_i`.
    pub fn new(devices: Vec<LocalDataset>, lambda: Option<f64>) -> Result<Self, ProblemError> {
        let first = devices.first().ok_or_else(|| ProblemError::InvalidInput("no devices".into()))?;
        let dim = first.dim();
        for (i, d) in devices.iter().enumerate() {
            if d.is_empty() {
                return Err(ProblemError::EmptyDataset(i));
            }
            if d.dim() != dim {
                return Err(ProblemError::InvalidInput(format!("device {i} has dimension {} not {dim}", d.dim())));
            }
        }
        let total: usize = devices.iter().map(LocalDataset::len).sum();
        let lambda = lambda.unwrap_or(1.0 / total as f64);
        if !(lambda > 0.0) {
            return Err(ProblemError::InvalidInput(format!("regularizer must be positive, got {lambda}")));
        }
        Ok(Self { devices, lambda, dim })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn device(&self, i: usize) -> &LocalDataset {
        &self.devices[i]
    }

    pub fn total_samples(&self) -> usize {
        self.devices.iter().map(LocalDataset::len).sum()
    }

    /// Smoothness constant `1/4 + lambda` (unit-norm features).
    pub fn smoothness(&self) -> f64 {
        0.25 + self.lambda
    }

    /// Strong convexity lower bound `lambda`.
    pub fn strong_convexity(&self) -> f64 {
        self.lambda
    }

    fn check(&self, device: usize, sample: Option<usize>, theta: &[f64]) -> Result<(), ProblemError> {
        let n = self.devices.len();
        if device >= n {
            return Err(ProblemError::DeviceOutOfRange { device, n_devices: n });
        }
        if let Some(sample) = sample {
            let len = self.devices[device].len();
            if sample >= len {
                return Err(ProblemError::SampleOutOfRange { device, sample, len });
            }
        }
        if theta.len() != self.dim {
            return Err(ProblemError::InvalidInput(format!("theta has dimension {} not {}", theta.len(), self.dim)));
        }
        Ok(())
    }

    /// Loss and gradient of one sample, bounds-checked.
    pub fn sample_loss_grad(
        &self,
        device: usize,
        sample: usize,
        theta: &[f64],
    ) -> Result<(f64, Vec<f64>), ProblemError> {
        self.check(device, Some(sample), theta)?;
        let mut grad = vec![0.0; self.dim];
        self.sample_grad_into(device, sample, theta, &mut grad);
        Ok((self.sample_loss(device, sample, theta), grad))
    }

    pub fn full_local_grad(&self, device: usize, theta: &[f64]) -> Result<Vec<f64>, ProblemError> {
        self.check(device, None, theta)?;
        Ok(self.local_grad(device, theta))
    }

    /// Global loss and gradient in one pass, devices evaluated in parallel
    /// and reduced in device order.
    pub fn loss_and_grad(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let parts: Vec<(f64, Vec<f64>)> = self
            .devices
            .par_iter()
            .map(|d| {
                let mut loss = 0.0;
                let mut coef_grad = vec![0.0; self.dim];
                for j in 0..d.len() {
                    let a = d.feature(j);
                    let b = d.label(j);
                    let z = b * linalg::dot(a, theta);
                    loss += log1p_exp_neg(z);
                    linalg::axpy(-b * sigmoid_neg(z), a, &mut coef_grad);
                }
                let m = d.len() as f64;
                coef_grad.iter_mut().for_each(|g| *g /= m);
                (loss / m, coef_grad)
            })
            .collect();
        let n = self.devices.len() as f64;
        let mut grad = theta.iter().map(|t| self.lambda * t).collect::<Vec<_>>();
        let mut loss = 0.5 * self.lambda * linalg::norm_sq(theta);
        for (l, g) in &parts {
            loss += l / n;
            linalg::axpy(1.0 / n, g, &mut grad);
        }
        (loss, grad)
    }
}

impl FiniteSumObjective for LogisticProblem {
    fn n_devices(&self) -> usize {
        self.devices.len()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn local_len(&self, device: usize) -> usize {
        self.devices[device].len()
    }

    fn sample_loss(&self, device: usize, sample: usize, theta: &[f64]) -> f64 {
        let d = &self.devices[device];
        let z = d.label(sample) * linalg::dot(d.feature(sample), theta);
        log1p_exp_neg(z) + 0.5 * self.lambda * linalg::norm_sq(theta)
    }

    fn sample_grad_into(&self, device: usize, sample: usize, theta: &[f64], out: &mut [f64]) {
        let d = &self.devices[device];
        let a = d.feature(sample);
        let b = d.label(sample);
        let coef = -b * sigmoid_neg(b * linalg::dot(a, theta));
        for ((o, &ak), &tk) in out.iter_mut().zip(a).zip(theta) {
            *o = coef * ak + self.lambda * tk;
        }
    }

    fn global_loss(&self, theta: &[f64]) -> f64 {
        self.loss_and_grad(theta).0
    }

    fn global_grad(&self, theta: &[f64]) -> Vec<f64> {
        self.loss_and_grad(theta).1
    }
}

/// Minimizer of the global loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimum {
    pub theta: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

pub fn solve_centralized(problem: &LogisticProblem, tolerance: f64) -> Result<Optimum, ProblemError> {
    solve_centralized_from(problem, &vec![0.0; problem.dim], tolerance)
}

/// Full-batch gradient descent with Armijo backtracking. Trial steps come
/// from the Barzilai–Borwein rule; `1/L` is the fallback and is always
/// accepted.
pub fn solve_centralized_from(
    problem: &LogisticProblem,
    start: &[f64],
    tolerance: f64,
) -> Result<Optimum, ProblemError> {
    if start.len() != problem.dim {
        return Err(ProblemError::InvalidInput("start point has the wrong dimension".into()));
    }
    let safe_step = 1.0 / problem.smoothness();
    let mut theta = start.to_vec();
    let (mut value, mut grad) = problem.loss_and_grad(&theta);
    let mut step = safe_step;
    for iteration in 0..MAX_SOLVER_ITERATIONS {
        let grad_sq = linalg::norm_sq(&grad);
        if grad_sq.sqrt() < tolerance {
            return Ok(Optimum { theta, value, grad_norm: grad_sq.sqrt(), iterations: iteration });
        }
        // Decreases below rounding of F are not observable; accept them.
        let slack = 4.0 * f64::EPSILON * value.abs();
        let (next, next_value, next_grad) = loop {
            let candidate: Vec<f64> = theta.iter().zip(&grad).map(|(t, g)| t - step * g).collect();
            let (cv, cg) = problem.loss_and_grad(&candidate);
            if cv <= value - 0.5 * step * grad_sq + slack || step <= safe_step {
                break (candidate, cv, cg);
            }
            step = (0.5 * step).max(safe_step);
        };
        let s: Vec<f64> = next.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = linalg::dot(&s, &y);
        step = if sy > 0.0 { (linalg::norm_sq(&s) / sy).clamp(safe_step, 1e6 * safe_step) } else { safe_step };
        theta = next;
        value = next_value;
        grad = next_grad;
    }
    Err(ProblemError::NotConverged { iterations: MAX_SOLVER_ITERATIONS, grad_norm: linalg::norm(&grad), tolerance })
}
