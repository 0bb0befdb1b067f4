use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One row of `metrics.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub model: String,
    pub train_loss: f64,
    pub test_top1: f64,
    pub alpha: f64,
    pub seconds: f64,
}

pub const METRICS_HEADER: &str = "epoch,model,train_loss,test_top1,alpha,seconds";

pub fn write_metrics_csv(path: impl AsRef<Path>, records: &[MetricsRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if records.is_empty() {
        w.write_record(METRICS_HEADER.split(','))?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<Vec<MetricsRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|rec| rec.map_err(Into::into)).collect()
}

/// Mean and sample standard deviation of one sweep point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub alpha_or_k: f64,
    pub mean: f64,
    pub std: f64,
}

/// `(mean, sample std)`; the std of a single value is 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Groups `(key, value)` pairs by key, keeping first-seen key order.
pub fn aggregate(points: &[(f64, f64)]) -> Vec<Aggregate> {
    let mut keys: Vec<f64> = Vec::new();
    for &(k, _) in points {
        if !keys.iter().any(|&x| x.to_bits() == k.to_bits()) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|k| {
            let vals: Vec<f64> = points.iter().filter(|p| p.0.to_bits() == k.to_bits()).map(|p| p.1).collect();
            let (mean, std) = mean_std(&vals);
            Aggregate {
                alpha_or_k: k,
                mean,
                std,
            }
        })
        .collect()
}

pub fn write_aggregate_csv(path: impl AsRef<Path>, rows: &[Aggregate]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(["alpha_or_k", "mean", "std"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_aggregate_csv(path: impl AsRef<Path>) -> Result<Vec<Aggregate>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|rec| rec.map_err(Into::into)).collect()
}
