use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column order of every per-seed metrics file.
pub const METRICS_HEADER: [&str; 7] =
    ["env_steps", "episode_count", "mean_eval_return", "eval_return_stddev", "mean_eval_success", "wall_ms", "seed"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub env_steps: u64,
    pub episode_count: u64,
    pub mean_eval_return: f64,
    pub eval_return_stddev: f64,
    pub mean_eval_success: f64,
    pub wall_ms: u64,
    pub seed: u64,
}

/// Across-seed statistics at one evaluation index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub env_steps: u64,
    pub mean_eval_return: f64,
    /// Sample standard deviation of the per-seed mean returns.
    pub eval_return_stddev: f64,
    pub mean_eval_success: f64,
    pub eval_success_stddev: f64,
    pub seeds: usize,
}

/// One row of the merged ablation file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub algo: String,
    pub seed: u64,
    pub env_steps: u64,
    pub episode_count: u64,
    pub mean_eval_return: f64,
    pub eval_return_stddev: f64,
    pub mean_eval_success: f64,
    pub wall_ms: u64,
}

impl AblationRow {
    pub fn new(algo: &str, row: &MetricsRow) -> Self {
        Self {
            algo: algo.to_string(),
            seed: row.seed,
            env_steps: row.env_steps,
            episode_count: row.episode_count,
            mean_eval_return: row.mean_eval_return,
            eval_return_stddev: row.eval_return_stddev,
            mean_eval_success: row.mean_eval_success,
            wall_ms: row.wall_ms,
        }
    }
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    write_rows(path, rows, &METRICS_HEADER)
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::MalformedCsv { path: path.to_path_buf(), reason: e.to_string() }))
        .collect()
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    read_rows(path)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Combines per-seed series row by row. Series are aligned by evaluation
/// index and truncated to the shortest one.
pub fn aggregate(runs: &[Vec<MetricsRow>]) -> Vec<AggregateRow> {
    let len = runs.iter().map(Vec::len).min().unwrap_or(0);
    (0..len)
        .map(|i| {
            let returns: Vec<f64> = runs.iter().map(|r| r[i].mean_eval_return).collect();
            let success: Vec<f64> = runs.iter().map(|r| r[i].mean_eval_success).collect();
            let (mean_eval_return, eval_return_stddev) = mean_std(&returns);
            let (mean_eval_success, eval_success_stddev) = mean_std(&success);
            AggregateRow {
                env_steps: runs[0][i].env_steps,
                mean_eval_return,
                eval_return_stddev,
                mean_eval_success,
                eval_success_stddev,
                seeds: runs.len(),
            }
        })
        .collect()
}

pub const AGGREGATE_HEADER: [&str; 6] =
    ["env_steps", "mean_eval_return", "eval_return_stddev", "mean_eval_success", "eval_success_stddev", "seeds"];

pub const ABLATION_HEADER: [&str; 8] = [
    "algo",
    "seed",
    "env_steps",
    "episode_count",
    "mean_eval_return",
    "eval_return_stddev",
    "mean_eval_success",
    "wall_ms",
];
