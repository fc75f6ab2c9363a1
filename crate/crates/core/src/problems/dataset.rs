use std::fmt::Write as _;

use super::ProblemError;

/// Labeled samples with `dim`-dimensional features stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalDataset {
    dim: usize,
    features: Vec<f64>,
    labels: Vec<f64>,
}

impl LocalDataset {
    /// Builds a dataset, scaling every feature row to unit norm. Labels must
    /// be exactly `+1` or `-1`; zero feature rows are rejected.
    pub fn normalized(dim: usize, mut features: Vec<f64>, labels: Vec<f64>) -> Result<Self, ProblemError> {
        if dim == 0 {
            return Err(ProblemError::InvalidInput("feature dimension must be positive".into()));
        }
        if features.len() != dim * labels.len() {
            return Err(ProblemError::InvalidInput(format!(
                "{} feature values do not match {} labels of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&b| b != 1.0 && b != -1.0) {
            return Err(ProblemError::InvalidInput(format!("label {bad} is not +1/-1")));
        }
        for (j, row) in features.chunks_mut(dim).enumerate() {
            let n = crate::linalg::norm(row);
            if !(n > 0.0) || !n.is_finite() {
                return Err(ProblemError::InvalidInput(format!("sample {j} has a zero or non-finite feature")));
            }
            row.iter_mut().for_each(|x| *x /= n);
        }
        Ok(Self { dim, features, labels })
    }

    pub fn empty(dim: usize) -> Self {
        Self { dim, features: Vec::new(), labels: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature(&self, j: usize) -> &[f64] {
        &self.features[j * self.dim..(j + 1) * self.dim]
    }

    pub fn label(&self, j: usize) -> f64 {
        self.labels[j]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    /// Contiguous sub-range of samples.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            dim: self.dim,
            features: self.features[start * self.dim..end * self.dim].to_vec(),
            labels: self.labels[start..end].to_vec(),
        }
    }

    /// Fraction of samples with `sign(a . theta) == b`; a zero logit counts
    /// as `+1`.
    pub fn accuracy(&self, theta: &[f64]) -> f64 {
        if self.is_empty() {
            return f64::NAN;
        }
        let hits = (0..self.len())
            .filter(|&j| {
                let logit = crate::linalg::dot(self.feature(j), theta);
                let predicted = if logit >= 0.0 { 1.0 } else { -1.0 };
                predicted == self.label(j)
            })
            .count();
        hits as f64 / self.len() as f64
    }

    /// Plain-text matrix: a `samples=M dim=D` header, then one
    /// `label f_1 ... f_D` row per sample.
    pub fn to_text_matrix(&self) -> String {
        let mut out = format!("samples={} dim={}\n", self.len(), self.dim);
        for j in 0..self.len() {
            let _ = write!(out, "{:e}", self.label(j));
            for x in self.feature(j) {
                let _ = write!(out, " {x:e}");
            }
            out.push('\n');
        }
        out
    }

    /// Parses [`to_text_matrix`](Self::to_text_matrix) output. Rows are taken
    /// as-is, without renormalizing.
    pub fn from_text_matrix(text: &str) -> Result<Self, ProblemError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(ProblemError::Parse { line: 1, msg: "empty input".into() })?;
        let field = |key: &str| -> Option<usize> {
            header.split_whitespace().find_map(|kv| kv.strip_prefix(key)?.strip_prefix('=')?.parse().ok())
        };
        let (samples, dim) = match (field("samples"), field("dim")) {
            (Some(s), Some(d)) if d > 0 => (s, d),
            _ => return Err(ProblemError::Parse { line: 1, msg: format!("bad header `{header}`") }),
        };
        let mut features = Vec::with_capacity(samples * dim);
        let mut labels = Vec::with_capacity(samples);
        for (idx, line) in lines {
            let values: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
            let values = values.map_err(|e| ProblemError::Parse { line: idx + 1, msg: e.to_string() })?;
            if values.len() != dim + 1 {
                return Err(ProblemError::Parse { line: idx + 1, msg: format!("expected {} values", dim + 1) });
            }
            labels.push(values[0]);
            features.extend_from_slice(&values[1..]);
        }
        if labels.len() != samples {
            return Err(ProblemError::Parse {
                line: 1,
                msg: format!("header says {samples} rows, found {}", labels.len()),
            });
        }
        if let Some(bad) = labels.iter().find(|&&b| b != 1.0 && b != -1.0) {
            return Err(ProblemError::InvalidInput(format!("label {bad} is not +1/-1")));
        }
        Ok(Self { dim, features, labels })
    }
}

/// Contiguous split across `n_devices`.
///
/// With `per_device = None` every sample is used and device counts differ by
/// at most one (earlier devices get the extra samples). With
/// `Some(k)` the first `n_devices * k` samples are used, `k` per device.
pub fn partition(
    dataset: &LocalDataset,
    n_devices: usize,
    per_device: Option<usize>,
) -> Result<Vec<LocalDataset>, ProblemError> {
    if n_devices == 0 {
        return Err(ProblemError::InvalidInput("need at least one device".into()));
    }
    let total = dataset.len();
    let counts: Vec<usize> = match per_device {
        Some(0) => return Err(ProblemError::InvalidInput("per-device count must be positive".into())),
        Some(k) => {
            if n_devices * k > total {
                return Err(ProblemError::InsufficientSamples { needed: n_devices * k, available: total });
            }
            vec![k; n_devices]
        }
        None => {
            if total < n_devices {
                return Err(ProblemError::InsufficientSamples { needed: n_devices, available: total });
            }
            let (base, extra) = (total / n_devices, total % n_devices);
            (0..n_devices).map(|i| base + usize::from(i < extra)).collect()
        }
    };
    let mut start = 0;
    Ok(counts
        .into_iter()
        .map(|c| {
            let part = dataset.slice(start, start + c);
            start += c;
            part
        })
        .collect())
}
