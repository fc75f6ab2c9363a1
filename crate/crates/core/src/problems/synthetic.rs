//! Seeded synthetic binary classification data.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{partition, LocalDataset, LogisticProblem, ProblemError};
use crate::linalg;
use crate::rng::{self, domain};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub train_samples: usize,
    pub test_samples: usize,
    pub dimension: usize,
    /// Probability that a label is flipped after `sign(a . theta*)`.
    pub flip_rate: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(train_samples: usize, dimension: usize, seed: u64) -> Self {
        Self { train_samples, test_samples: 0, dimension, flip_rate: 0.1, seed }
    }

    /// Ground truth `theta*` plus train and test pools. Features are unit-norm
    /// Gaussian directions; both pools share the same `theta*`.
    pub fn generate(&self) -> Result<(LocalDataset, LocalDataset, Vec<f64>), ProblemError> {
        if self.dimension == 0 || self.train_samples == 0 {
            return Err(ProblemError::InvalidInput("synthetic data needs positive dimension and sample count".into()));
        }
        if !(0.0..=1.0).contains(&self.flip_rate) {
            return Err(ProblemError::InvalidInput(format!("flip rate {} outside [0,1]", self.flip_rate)));
        }
        let mut rng = rng::substream(self.seed, &[domain::DATA]);
        let truth: Vec<f64> = (0..self.dimension).map(|_| StandardNormal.sample(&mut rng)).collect();
        let train = self.draw(&truth, self.train_samples, &mut rng)?;
        let test = if self.test_samples > 0 {
            self.draw(&truth, self.test_samples, &mut rng)?
        } else {
            LocalDataset::empty(self.dimension)
        };
        Ok((train, test, truth))
    }

    fn draw<R: Rng>(&self, truth: &[f64], count: usize, rng: &mut R) -> Result<LocalDataset, ProblemError> {
        let d = self.dimension;
        let mut features = Vec::with_capacity(count * d);
        let mut labels = Vec::with_capacity(count);
        for _ in 0..count {
            let a: Vec<f64> = loop {
                let a: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
                if linalg::norm(&a) > 0.0 {
                    break a;
                }
            };
            let mut b = if linalg::dot(&a, truth) >= 0.0 { 1.0 } else { -1.0 };
            if rng.random::<f64>() < self.flip_rate {
                b = -b;
            }
            features.extend_from_slice(&a);
            labels.push(b);
        }
        LocalDataset::normalized(d, features, labels)
    }
}

/// `n_devices * samples_per_device` synthetic samples split evenly, default
/// regularizer.
pub fn synthesize(n_devices: usize, samples_per_device: usize, dimension: usize, seed: u64) -> LogisticProblem {
    let spec = SyntheticSpec::new(n_devices * samples_per_device, dimension, seed);
    let (train, _, _) = spec.generate().expect("valid synthetic spec");
    let parts = partition(&train, n_devices, Some(samples_per_device)).expect("exact split");
    LogisticProblem::new(parts, None).expect("non-empty devices")
}
