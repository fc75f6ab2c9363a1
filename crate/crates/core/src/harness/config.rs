use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;

use super::HarnessError;
use crate::channel::{dbm_to_linear, ChannelParams};
use crate::learners::Variant;
use crate::scheduler::SchedulePolicy;

macro_rules! string_enum {
    ($ty:ty, $what:literal, { $($text:literal => $value:expr),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($text => Ok($value),)+
                    other => Err(format!(concat!("unknown ", $what, " `{}` (expected one of: {})"), other, [$($text),+].join(", "))),
                }
            }
        }

        impl TryFrom<String> for $ty {
            type Error = String;
            fn try_from(s: String) -> Result<Self, String> {
                s.parse()
            }
        }
    };
}

string_enum!(Variant, "variant", { "dsgd" => Variant::Dsgd, "dsgt" => Variant::Dsgt, "dsgt-vr" => Variant::DsgtVr });
string_enum!(SchedulePolicy, "schedule", { "naive" => SchedulePolicy::Naive, "coloring" => SchedulePolicy::Coloring });

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(try_from = "String")]
pub enum ConsensusKind {
    ErrorFree,
    AirComp,
}
string_enum!(ConsensusKind, "consensus mode", { "error-free" => ConsensusKind::ErrorFree, "aircomp" => ConsensusKind::AirComp });

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(try_from = "String")]
pub enum TopologyKind {
    /// Edges where one Rayleigh gain draw exceeds the gain threshold,
    /// redrawn until connected.
    Threshold,
    Ring,
    Path,
    Complete,
    ErdosRenyi,
}
string_enum!(TopologyKind, "topology", {
    "threshold" => TopologyKind::Threshold,
    "ring" => TopologyKind::Ring,
    "path" => TopologyKind::Path,
    "complete" => TopologyKind::Complete,
    "erdos-renyi" => TopologyKind::ErdosRenyi,
});

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(try_from = "String")]
pub enum DatasetKind {
    Synthetic,
    Idx,
}
string_enum!(DatasetKind, "dataset", { "synthetic" => DatasetKind::Synthetic, "idx" => DatasetKind::Idx });

/// Fixed `alpha`, or the order-of-magnitude step from the convergence
/// analysis, halved whenever the gap keeps growing.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(try_from = "StepSizeRepr")]
pub enum StepSize {
    Fixed(f64),
    Auto,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum StepSizeRepr {
    Number(f64),
    Text(String),
}

impl TryFrom<StepSizeRepr> for StepSize {
    type Error = String;
    fn try_from(r: StepSizeRepr) -> Result<Self, String> {
        match r {
            StepSizeRepr::Number(x) => Ok(StepSize::Fixed(x)),
            StepSizeRepr::Text(s) => s.parse(),
        }
    }
}

impl FromStr for StepSize {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "auto" {
            return Ok(StepSize::Auto);
        }
        s.parse::<f64>().map(StepSize::Fixed).map_err(|_| format!("step size `{s}` is neither a number nor `auto`"))
    }
}

impl fmt::Display for StepSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepSize::Fixed(x) => write!(f, "{x}"),
            StepSize::Auto => f.write_str("auto"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(deserialize_with = "from_text")]
    pub variant: Variant,
    pub consensus: ConsensusKind,
    pub devices: usize,
    pub iterations: usize,
    pub step_size: StepSize,
    /// Receiver noise power in dBm; 0 dBm is unit variance, `-inf` silence.
    pub noise_dbm: f64,
    pub peak_power: f64,
    pub gain_threshold: f64,
    pub topology: TopologyKind,
    /// Edge probability for `erdos-renyi`.
    pub edge_probability: f64,
    #[serde(deserialize_with = "from_text")]
    pub schedule: SchedulePolicy,

    pub dataset: DatasetKind,
    /// Synthetic training pool size.
    pub samples: usize,
    pub test_samples: usize,
    pub dimension: usize,
    pub flip_rate: f64,
    /// Seed of the synthetic data; defaults to `seed`.
    pub data_seed: Option<u64>,
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub class_a: u8,
    pub class_b: u8,
    pub train: usize,
    pub test: usize,
    /// Samples per device; `None` splits the whole pool evenly.
    pub per_device: Option<usize>,
    /// Regularizer; `None` uses `1 / total samples`.
    pub lambda: Option<f64>,

    pub repetitions: usize,
    pub record_every: usize,
    pub output: Option<PathBuf>,
}

fn from_text<'de, D, T>(de: D) -> Result<T, D::Error>
where
    D: serde::Deserializer<'de>,
    T: FromStr<Err = String>,
{
    let s = String::deserialize(de)?;
    s.parse().map_err(serde::de::Error::custom)
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            variant: Variant::DsgtVr,
            consensus: ConsensusKind::AirComp,
            devices: 20,
            iterations: 1000,
            step_size: StepSize::Fixed(0.1),
            noise_dbm: 0.0,
            peak_power: 1e6,
            gain_threshold: 0.5,
            topology: TopologyKind::Threshold,
            edge_probability: 0.3,
            schedule: SchedulePolicy::Coloring,
            dataset: DatasetKind::Synthetic,
            samples: 1000,
            test_samples: 0,
            dimension: 20,
            flip_rate: 0.1,
            data_seed: None,
            images: None,
            labels: None,
            class_a: 3,
            class_b: 5,
            train: 1000,
            test: 1968,
            per_device: None,
            lambda: None,
            repetitions: 10,
            record_every: 1,
            output: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let config: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn noise_power(&self) -> f64 {
        dbm_to_linear(self.noise_dbm)
    }

    /// Channel parameters for a model of dimension `dim`.
    pub fn channel(&self, dim: usize) -> Result<ChannelParams, HarnessError> {
        Ok(ChannelParams::new(self.noise_power(), self.peak_power, self.gain_threshold, dim)?)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |msg: String| Err(HarnessError::Config(msg));
        if self.devices == 0 {
            return fail("need at least one device".into());
        }
        if let StepSize::Fixed(a) = self.step_size {
            if !(a > 0.0) || !a.is_finite() {
                return fail(format!("step size {a} must be positive"));
            }
        }
        // -inf dBm is a noiseless receiver.
        if self.noise_dbm.is_nan() || self.noise_dbm == f64::INFINITY {
            return fail(format!("noise level {} dBm is not usable", self.noise_dbm));
        }
        if !(self.peak_power > 0.0) || !self.peak_power.is_finite() {
            return fail(format!("peak power {} must be positive", self.peak_power));
        }
        if !(self.gain_threshold >= 0.0) || !self.gain_threshold.is_finite() {
            return fail(format!("gain threshold {} must be non-negative", self.gain_threshold));
        }
        if self.topology == TopologyKind::ErdosRenyi && !(self.edge_probability > 0.0 && self.edge_probability <= 1.0) {
            return fail(format!("edge probability {} outside (0,1]", self.edge_probability));
        }
        if self.repetitions == 0 || self.record_every == 0 {
            return fail("repetitions and record_every must be positive".into());
        }
        if self.per_device == Some(0) {
            return fail("per_device must be positive".into());
        }
        if let Some(l) = self.lambda {
            if !(l > 0.0) || !l.is_finite() {
                return fail(format!("regularizer {l} must be positive"));
            }
        }
        match self.dataset {
            DatasetKind::Synthetic => {
                if self.samples == 0 || self.dimension == 0 {
                    return fail("synthetic data needs positive samples and dimension".into());
                }
                if !(0.0..=1.0).contains(&self.flip_rate) {
                    return fail(format!("flip rate {} outside [0,1]", self.flip_rate));
                }
            }
            DatasetKind::Idx => {
                if self.images.is_none() || self.labels.is_none() {
                    return fail("idx dataset needs `images` and `labels` paths".into());
                }
                if self.class_a == self.class_b || self.train == 0 {
                    return fail("idx dataset needs two distinct classes and a training set".into());
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_key_value_file() {
        let c = ExperimentConfig::from_toml_str(
            r#"
            seed = 7
            variant = "dsgd"
            consensus = "error-free"
            devices = 5
            step_size = "auto"
            schedule = "naive"
            topology = "ring"
            "#,
        )
        .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.variant, Variant::Dsgd);
        assert_eq!(c.consensus, ConsensusKind::ErrorFree);
        assert_eq!(c.step_size, StepSize::Auto);
        assert_eq!(c.schedule, SchedulePolicy::Naive);
        assert_eq!(c.topology, TopologyKind::Ring);
        assert_eq!(c.iterations, ExperimentConfig::default().iterations);
    }

    #[test]
    fn numeric_step_size() {
        let c = ExperimentConfig::from_toml_str("step_size = 0.25").unwrap();
        assert_eq!(c.step_size, StepSize::Fixed(0.25));
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ExperimentConfig::from_toml_str("variant = \"adam\"").is_err());
        assert!(ExperimentConfig::from_toml_str("peak_power = 0.0").is_err());
        assert!(ExperimentConfig::from_toml_str("step_size = -1.0").is_err());
        assert!(ExperimentConfig::from_toml_str("unknown_key = 1").is_err());
        assert!(ExperimentConfig::from_toml_str("dataset = \"idx\"").is_err());
    }

    #[test]
    fn zero_dbm_is_unit_noise() {
        assert_eq!(ExperimentConfig::default().noise_power(), 1.0);
    }
}
