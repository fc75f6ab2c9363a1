//! Convergence envelope for DSGT-VR with over-the-air consensus.
//!
//! `gap(t) <= (c L / 2) rho^t + (L N / (2 (N - 1))) * E * sum_{tau=1..t} rho^(t - tau)`
//! with `E = d sigma^2 B^2 / (gamma^2 P)` the worst-case decoded noise energy
//! and `c = (N / (N - 1)) ||theta_i^0 - theta_bar^0||^2 + N ||theta_bar^0 - theta*||^2`.

use super::HarnessError;
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceEnvelope {
    pub rho: f64,
    pub c: f64,
    pub n_devices: usize,
    /// `d sigma^2 B^2 / (gamma^2 P)`; zero for noiseless links.
    pub noise_energy: f64,
}

impl ConvergenceEnvelope {
    fn check(&self) -> Result<(), HarnessError> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(HarnessError::Bound(format!("rho = {} outside (0,1)", self.rho)));
        }
        if self.n_devices < 2 {
            return Err(HarnessError::Bound("the envelope needs at least two devices".into()));
        }
        Ok(())
    }

    /// Limit of the envelope as `t -> infinity`.
    pub fn floor(&self, smoothness: f64) -> Result<f64, HarnessError> {
        self.check()?;
        Ok(self.noise_coefficient(smoothness) / (1.0 - self.rho))
    }

    fn noise_coefficient(&self, smoothness: f64) -> f64 {
        let n = self.n_devices as f64;
        smoothness * n / (2.0 * (n - 1.0)) * self.noise_energy
    }
}

/// Right-hand side of the envelope at iteration `t`. The geometric sum is
/// evaluated in closed form `(1 - rho^t) / (1 - rho)`.
pub fn evaluate_bound(bound: &ConvergenceEnvelope, smoothness: f64, t: u64) -> Result<f64, HarnessError> {
    bound.check()?;
    let decay = bound.rho.powf(t as f64);
    let series = (1.0 - decay) / (1.0 - bound.rho);
    Ok(bound.c * smoothness / 2.0 * decay + bound.noise_coefficient(smoothness) * series)
}

/// Initial-condition constant `c`; the consensus term is taken at the device
/// farthest from the average.
pub fn compute_c(initial_models: &[Vec<f64>], optimum: &[f64]) -> Result<f64, HarnessError> {
    let n = initial_models.len();
    if n < 2 {
        return Err(HarnessError::Bound("the envelope needs at least two devices".into()));
    }
    let mean = linalg::mean_of(initial_models);
    let spread = initial_models.iter().map(|m| linalg::dist_sq(m, &mean)).fold(0.0, f64::max);
    let nf = n as f64;
    Ok(nf / (nf - 1.0) * spread + nf * linalg::dist_sq(&mean, optimum))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub rho: f64,
    pub r_squared: f64,
    /// Half-open index range of the trace used for the fit.
    pub window: (usize, usize),
}

/// Least-squares fit of `log(gap) = a + t log(rho)` over the prefix of the
/// trace that stays above `floor`. Entries are assumed one iteration apart.
pub fn fit_rho(trace: &[f64], floor: f64) -> Result<RateFit, HarnessError> {
    let end = trace.iter().position(|&g| !(g > floor)).unwrap_or(trace.len());
    if end < 3 {
        return Err(HarnessError::Bound(format!("only {end} points above the floor {floor:e}")));
    }
    let ys: Vec<f64> = trace[..end].iter().map(|g| g.ln()).collect();
    let n = end as f64;
    let mean_x = (n - 1.0) / 2.0;
    let mean_y = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in ys.iter().enumerate() {
        let (dx, dy) = (x as f64 - mean_x, y - mean_y);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    let slope = sxy / sxx;
    if !(slope < 0.0) {
        return Err(HarnessError::Bound(format!("trace is not decreasing (log slope {slope:e})")));
    }
    let r_squared = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    let rho = slope.exp().clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
    Ok(RateFit { rho, r_squared, window: (0, end) })
}

/// Step size of the order `min{1 / (mu M), m (1 - beta)^2 / (M L kappa^2)}`
/// with unit constants, where `m` and `M` are the smallest and largest local
/// sample counts and `kappa = L / mu`.
pub fn analytic_step_size(mu: f64, smoothness: f64, beta: f64, min_samples: usize, max_samples: usize) -> f64 {
    let (m, big_m) = (min_samples as f64, max_samples as f64);
    let kappa = smoothness / mu;
    let first = 1.0 / (mu * big_m);
    let second = m * (1.0 - beta).powi(2) / (big_m * smoothness * kappa * kappa);
    first.min(second)
}
