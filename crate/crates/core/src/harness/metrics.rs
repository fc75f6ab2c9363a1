use std::io::{Read, Write};

use super::HarnessError;

/// Snapshot of a run at one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub iteration: u64,
    /// Device-mean optimality gap `F(theta_i) - F(theta*)`.
    pub mean_gap: f64,
    pub device_gaps: Vec<f64>,
    /// `(1/N) sum_i ||theta_i - theta_bar||^2`.
    pub consensus_error: f64,
    /// Accuracy of `theta_bar` on the held-out set; NaN without one.
    pub test_accuracy: f64,
    /// Running maximum of `||theta_i||` over devices and iterations.
    pub max_theta_norm: f64,
    /// Mean decoded noise energy `||z~||^2` of this iteration's blocks.
    pub block_noise_energy: f64,
    /// Mean scaling factor `sqrt(p)` of this iteration's blocks.
    pub scaling_factor: f64,
    pub blocks: usize,
}

const LEADING: [&str; 2] = ["iteration", "mean_gap"];
const TRAILING: [&str; 6] =
    ["consensus_error", "test_accuracy", "max_theta_norm", "block_noise_energy", "scaling_factor", "blocks"];

pub fn csv_header(n_devices: usize) -> Vec<String> {
    LEADING
        .iter()
        .map(|s| s.to_string())
        .chain((0..n_devices).map(|i| format!("gap_dev_{i}")))
        .chain(TRAILING.iter().map(|s| s.to_string()))
        .collect()
}

/// Writes a header row and one row per record. Floats use the shortest
/// exponent form that parses back to the same bits.
pub fn write_csv<W: Write>(records: &[MetricsRecord], out: W) -> Result<(), HarnessError> {
    let n = records.first().map_or(0, |r| r.device_gaps.len());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(csv_header(n))?;
    for r in records {
        if r.device_gaps.len() != n {
            return Err(HarnessError::Metrics("records disagree on the device count".into()));
        }
        let mut row = vec![r.iteration.to_string(), format!("{:e}", r.mean_gap)];
        row.extend(r.device_gaps.iter().map(|g| format!("{g:e}")));
        row.extend(
            [r.consensus_error, r.test_accuracy, r.max_theta_norm, r.block_noise_energy, r.scaling_factor]
                .iter()
                .map(|x| format!("{x:e}")),
        );
        row.push(r.blocks.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<MetricsRecord>, HarnessError> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers()?.clone();
    let width = header.len();
    if width < LEADING.len() + TRAILING.len() {
        return Err(HarnessError::Metrics(format!("header has only {width} columns")));
    }
    let n = width - LEADING.len() - TRAILING.len();
    if header.iter().ne(csv_header(n).iter().map(String::as_str)) {
        return Err(HarnessError::Metrics("unexpected header".into()));
    }
    let mut records = Vec::new();
    for (row_idx, row) in rd.records().enumerate() {
        let row = row?;
        let bad =
            |col: usize| HarnessError::Metrics(format!("row {}: bad value in column `{}`", row_idx + 1, &header[col]));
        let float = |col: usize| row[col].parse::<f64>().map_err(|_| bad(col));
        let t = 2 + n;
        records.push(MetricsRecord {
            iteration: row[0].parse().map_err(|_| bad(0))?,
            mean_gap: float(1)?,
            device_gaps: (2..t).map(float).collect::<Result<_, _>>()?,
            consensus_error: float(t)?,
            test_accuracy: float(t + 1)?,
            max_theta_norm: float(t + 2)?,
            block_noise_energy: float(t + 3)?,
            scaling_factor: float(t + 4)?,
            blocks: row[t + 5].parse().map_err(|_| bad(t + 5))?,
        });
    }
    Ok(records)
}

/// Field-wise mean over repetitions, in repetition order. `max_theta_norm`
/// takes the maximum instead.
pub fn average_runs(runs: &[Vec<MetricsRecord>]) -> Result<Vec<MetricsRecord>, HarnessError> {
    let first = runs.first().ok_or_else(|| HarnessError::Metrics("no runs to average".into()))?;
    if runs.len() == 1 {
        return Ok(first.clone());
    }
    if runs.iter().any(|r| r.len() != first.len()) {
        return Err(HarnessError::Metrics("runs have different lengths".into()));
    }
    let k = runs.len() as f64;
    let mean = |f: &dyn Fn(&MetricsRecord) -> f64, t: usize| runs.iter().map(|r| f(&r[t])).sum::<f64>() / k;
    Ok((0..first.len())
        .map(|t| {
            let base = &first[t];
            MetricsRecord {
                iteration: base.iteration,
                mean_gap: mean(&|r| r.mean_gap, t),
                device_gaps: (0..base.device_gaps.len()).map(|i| mean(&|r| r.device_gaps[i], t)).collect(),
                consensus_error: mean(&|r| r.consensus_error, t),
                test_accuracy: mean(&|r| r.test_accuracy, t),
                max_theta_norm: runs.iter().map(|r| r[t].max_theta_norm).fold(0.0, f64::max),
                block_noise_energy: mean(&|r| r.block_noise_energy, t),
                scaling_factor: mean(&|r| r.scaling_factor, t),
                blocks: base.blocks,
            }
        })
        .collect())
}
