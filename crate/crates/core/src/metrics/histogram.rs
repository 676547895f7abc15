use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::nn::ParamStore;

/// Magnitude under which a weight counts as near zero.
pub const NEAR_ZERO: f64 = 0.01;

/// Histogram of all non-bias weights over a range symmetric about zero.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightHistogram {
    pub tag: String,
    /// `bins + 1` ascending edges.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub stdev: f64,
    pub near_zero_fraction: f64,
}

impl WeightHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// CSV `{bin_lo, bin_hi, count}` after a digest comment line.
    pub fn write_csv(&self, path: &Path, config_digest: &str) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "# config_digest: {config_digest}")?;
        writeln!(f, "# model: {}", self.tag)?;
        let mut w = csv::Writer::from_writer(f);
        w.write_record(["bin_lo", "bin_hi", "count"])?;
        for (i, c) in self.counts.iter().enumerate() {
            w.write_record([self.edges[i].to_string(), self.edges[i + 1].to_string(), c.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// The range is `±max|w|` (`±1` when every weight is zero).
pub fn weight_histogram(params: &ParamStore, bins: usize, tag: &str) -> Result<WeightHistogram> {
    if bins == 0 {
        return Err(Error::config("histogram needs at least one bin"));
    }
    let w = params.weights_flat();
    if w.is_empty() {
        return Err(Error::Domain("no weights to histogram".into()));
    }
    let max = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let r = if max > 0.0 { max } else { 1.0 };
    let edges: Vec<f64> = (0..=bins).map(|i| -r + 2.0 * r * i as f64 / bins as f64).collect();
    let mut counts = vec![0u64; bins];
    for v in &w {
        let pos = ((v + r) / (2.0 * r) * bins as f64).floor() as usize;
        counts[pos.min(bins - 1)] += 1;
    }
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let stdev = (w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    let near = w.iter().filter(|v| v.abs() < NEAR_ZERO).count() as f64 / n;
    Ok(WeightHistogram {
        tag: tag.to_string(),
        edges,
        counts,
        stdev,
        near_zero_fraction: near,
    })
}
