//! Learning tasks: finite-sum objectives held by devices.

mod dataset;
pub mod idx;
mod logistic;
pub mod synthetic;

use thiserror::Error;

pub use dataset::{partition, LocalDataset};
pub use logistic::{solve_centralized, solve_centralized_from, LogisticProblem, Optimum, DEFAULT_ORACLE_TOLERANCE};
pub use synthetic::{synthesize, SyntheticSpec};

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("device {device} out of range ({n_devices} devices)")]
    DeviceOutOfRange { device: usize, n_devices: usize },
    #[error("sample {sample} out of range for device {device} ({len} samples)")]
    SampleOutOfRange { device: usize, sample: usize, len: usize },
    #[error("dataset of device {0} is empty")]
    EmptyDataset(usize),
    #[error("need {needed} samples, only {available} available")]
    InsufficientSamples { needed: usize, available: usize },
    #[error("bad IDX magic number: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated IDX file: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("image/label count mismatch: {images} images, {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("dataset text line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("centralized solver stopped after {iterations} iterations with gradient norm {grad_norm:e} (target {tolerance:e})")]
    NotConverged { iterations: usize, grad_norm: f64, tolerance: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A finite-sum objective `F = (1/N) sum_i f_i`, `f_i = (1/m_i) sum_j f_ij`,
/// split across devices. Index arguments are trusted; checked entry points
/// live on the concrete problem types.
pub trait FiniteSumObjective: Sync {
    fn n_devices(&self) -> usize;

    fn dim(&self) -> usize;

    /// Number of local samples `m_i` on `device`.
    fn local_len(&self, device: usize) -> usize;

    fn sample_loss(&self, device: usize, sample: usize, theta: &[f64]) -> f64;

    /// Overwrites `out` with `grad f_ij(theta)`.
    fn sample_grad_into(&self, device: usize, sample: usize, theta: &[f64], out: &mut [f64]);

    fn local_grad(&self, device: usize, theta: &[f64]) -> Vec<f64> {
        let m = self.local_len(device);
        let mut acc = vec![0.0; self.dim()];
        let mut buf = vec![0.0; self.dim()];
        for j in 0..m {
            self.sample_grad_into(device, j, theta, &mut buf);
            crate::linalg::axpy(1.0, &buf, &mut acc);
        }
        acc.iter_mut().for_each(|x| *x /= m as f64);
        acc
    }

    fn local_loss(&self, device: usize, theta: &[f64]) -> f64 {
        let m = self.local_len(device);
        (0..m).map(|j| self.sample_loss(device, j, theta)).sum::<f64>() / m as f64
    }

    fn global_loss(&self, theta: &[f64]) -> f64 {
        let n = self.n_devices();
        (0..n).map(|i| self.local_loss(i, theta)).sum::<f64>() / n as f64
    }

    fn global_grad(&self, theta: &[f64]) -> Vec<f64> {
        let n = self.n_devices();
        let mut acc = vec![0.0; self.dim()];
        for i in 0..n {
            crate::linalg::axpy(1.0, &self.local_grad(i, theta), &mut acc);
        }
        acc.iter_mut().for_each(|x| *x /= n as f64);
        acc
    }

    fn max_local_len(&self) -> usize {
        (0..self.n_devices()).map(|i| self.local_len(i)).max().unwrap_or(0)
    }

    fn min_local_len(&self) -> usize {
        (0..self.n_devices()).map(|i| self.local_len(i)).min().unwrap_or(0)
    }
}
