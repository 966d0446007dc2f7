//! Position error metrics, time-blocked k-fold splits, wrist-error
//! histograms and the architecture x codec benchmark matrix.

mod bench;

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{GroundTruthFrame, SEQ_LEN};
use crate::estimate::ArmPose;
use crate::nn::NnError;
use crate::rotmath::RotError;

pub use bench::{bench_matrix, evaluate_model, full_matrix, BenchConfig, BenchReport, CellResult, FoldStats, PerField};

/// Training examples within this many indices of a test block share frames
/// with its windows and are left out of the training split.
pub const PURGE_GAP: usize = SEQ_LEN - 1;
pub const HIST_BIN_CM: f64 = 1.0;
pub const HIST_MAX_CM: f64 = 30.0;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("split: {0}")]
    Split(String),
    #[error("aggregation: {0}")]
    Aggregate(String),
    #[error(transparent)]
    Model(#[from] NnError),
    #[error(transparent)]
    Rotation(#[from] RotError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub wrist_err: f64,
    pub elbow_err: f64,
    pub combined: f64,
}

impl ErrorRecord {
    pub fn new(wrist_err: f64, elbow_err: f64) -> Self {
        ErrorRecord { wrist_err, elbow_err, combined: (wrist_err + elbow_err) / 2.0 }
    }

    pub fn get(&self, field: Field) -> f64 {
        match field {
            Field::Wrist => self.wrist_err,
            Field::Elbow => self.elbow_err,
            Field::Combined => self.combined,
        }
    }
}

/// Euclidean elbow and wrist errors in the shoulder frame, in meters.
pub fn position_errors(pred: &ArmPose, truth: &GroundTruthFrame) -> Result<ErrorRecord, EvalError> {
    let (p_e, p_w) = truth.positions()?;
    Ok(ErrorRecord::new(pred.p_w.distance(p_w), pred.p_e.distance(p_e)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Wrist,
    Elbow,
    Combined,
}

impl Field {
    pub const ALL: [Field; 3] = [Field::Wrist, Field::Elbow, Field::Combined];

    pub fn name(self) -> &'static str {
        match self {
            Field::Wrist => "wrist",
            Field::Elbow => "elbow",
            Field::Combined => "combined",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub median: f64,
    pub rmse: f64,
    /// Sample standard deviation; 0 when `n == 1`, see `std_defined`.
    pub std: f64,
    pub std_defined: bool,
    pub n: usize,
}

/// Exact summary statistics of a non-empty sample.
pub fn summarize(values: &[f64]) -> Result<MetricSummary, EvalError> {
    let n = values.len();
    if n == 0 {
        return Err(EvalError::Aggregate("no values".into()));
    }
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let rmse = (values.iter().map(|v| v * v).sum::<f64>() / nf).sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 { sorted[n / 2] } else { (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0 };
    let (std, std_defined) = if n > 1 {
        ((values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt(), true)
    } else {
        (0.0, false)
    };
    Ok(MetricSummary { mean, median, rmse, std, std_defined, n })
}

pub fn aggregate_metrics(records: &[ErrorRecord], field: Field) -> Result<MetricSummary, EvalError> {
    let values: Vec<f64> = records.iter().map(|r| r.get(field)).collect();
    summarize(&values)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitStrategy {
    /// Contiguous time blocks with a purge gap around each test block.
    #[default]
    TimeBlocks,
    /// Whole sessions per fold, assigned in a seeded shuffled order.
    BySession,
}

/// Splits `0..n` into `k` contiguous test blocks, sizes differing by at most
/// one. Training indices within `purge` of a test block are dropped.
pub fn kfold_split(n: usize, k: usize, purge: usize) -> Result<Vec<Fold>, EvalError> {
    if k < 2 {
        return Err(EvalError::Split(format!("need at least 2 folds, got {k}")));
    }
    if n < k {
        return Err(EvalError::Split(format!("{n} samples cannot fill {k} folds")));
    }
    Ok((0..k)
        .map(|i| {
            let (lo, hi) = (i * n / k, (i + 1) * n / k);
            let train = (0..lo.saturating_sub(purge)).chain((hi + purge).min(n)..n).collect();
            Fold { train, test: (lo..hi).collect() }
        })
        .collect())
}

/// Assigns whole sessions to folds. `sessions[i]` is the session of example
/// `i`; the session order is shuffled by `seed` and dealt round-robin.
pub fn kfold_by_session(sessions: &[u32], k: usize, seed: u64) -> Result<Vec<Fold>, EvalError> {
    let mut ids: Vec<u32> = sessions.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if k < 2 || ids.len() < k {
        return Err(EvalError::Split(format!("{} sessions cannot fill {k} folds", ids.len())));
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let fold_of = |s: u32| ids.iter().position(|&x| x == s).expect("known session") % k;
    let assignment: Vec<usize> = sessions.iter().map(|&s| fold_of(s)).collect();
    Ok((0..k)
        .map(|f| {
            let (test, train) = (0..sessions.len()).partition(|&i| assignment[i] == f);
            Fold { train, test }
        })
        .collect())
}

/// Counts per 1 cm bin over [0, 30) cm plus one overflow bin.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn bins() -> usize {
        (HIST_MAX_CM / HIST_BIN_CM) as usize
    }

    pub fn from_errors_m(errors: impl IntoIterator<Item = f64>) -> Self {
        let mut counts = vec![0; Self::bins() + 1];
        for e in errors {
            let b = ((e * 100.0) / HIST_BIN_CM).floor();
            let idx = if b >= 0.0 && b < Self::bins() as f64 { b as usize } else { Self::bins() };
            counts[idx] += 1;
        }
        Histogram { counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `lo_cm,hi_cm,count` rows; the overflow bin has an `inf` upper edge.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "lo_cm,hi_cm,count")?;
        for (i, c) in self.counts.iter().enumerate() {
            let lo = i as f64 * HIST_BIN_CM;
            if i < Self::bins() {
                writeln!(out, "{lo},{},{c}", lo + HIST_BIN_CM)?;
            } else {
                writeln!(out, "{lo},inf,{c}")?;
            }
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(&mut f)?;
        f.flush()
    }
}
