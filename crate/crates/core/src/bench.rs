//! Inference time per recovered symbol across worker-pool sizes.

use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{compile_count, CompiledModel, Model, Precision, FEATURES};
use crate::signal::WindowSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub warmup_iters: usize,
    pub measured_iters: usize,
    pub thread_counts: Vec<usize>,
    pub precision: Precision,
    pub batch_windows: usize,
    /// Seed of the synthetic input windows.
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            warmup_iters: 3,
            measured_iters: 20,
            thread_counts: vec![1, 2, 4, 8],
            precision: Precision::Float32,
            batch_windows: 64,
            seed: 1,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.measured_iters < 10 {
            return Err(Error::config("measured_iters must be ≥ 10"));
        }
        if self.thread_counts.is_empty() || self.thread_counts.contains(&0) {
            return Err(Error::config("thread_counts must be a nonempty list of positive counts"));
        }
        if self.batch_windows == 0 {
            return Err(Error::config("batch_windows must be ≥ 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub model: String,
    pub threads: usize,
    pub median_ns_per_symbol: f64,
    pub p10: f64,
    pub p90: f64,
    /// Teacher time over this model's time at the same thread count.
    pub speedup_vs_teacher: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

/// Linear-interpolated percentile of sorted values.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Smallest observable nonzero step of the monotonic clock.
pub fn timer_granularity() -> Duration {
    let mut best = Duration::MAX;
    for _ in 0..200 {
        let a = Instant::now();
        let mut b = Instant::now();
        while b == a {
            b = Instant::now();
        }
        best = best.min(b - a);
    }
    best
}

fn run_precision<T: Float + Send + Sync>(
    model: &Model,
    name: &str,
    cfg: &BenchConfig,
    window: &WindowSpec,
) -> Result<Vec<BenchRow>> {
    let compiled: CompiledModel<T> = model.compile()?;
    let granularity = timer_granularity();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let per = window.input_len * FEATURES;
    let mut windows = cfg.batch_windows;
    let mut rows = Vec::with_capacity(cfg.thread_counts.len());
    for &threads in &cfg.thread_counts {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::config(format!("thread pool: {e}")))?;
        let (times, used) = loop {
            let inputs: Vec<T> = (0..windows * per)
                .map(|_| T::from(rng.random_range(-1.0..1.0)).unwrap())
                .collect();
            let compiled_before = compile_count();
            let times = pool.install(|| -> Result<Vec<f64>> {
                for _ in 0..cfg.warmup_iters {
                    std::hint::black_box(compiled.infer_batch_native(&inputs, windows)?);
                }
                let mut times = Vec::with_capacity(cfg.measured_iters);
                for _ in 0..cfg.measured_iters {
                    let t0 = Instant::now();
                    std::hint::black_box(compiled.infer_batch_native(std::hint::black_box(&inputs), windows)?);
                    times.push(t0.elapsed().as_secs_f64());
                }
                Ok(times)
            })?;
            debug_assert_eq!(compile_count(), compiled_before, "weights compiled inside the timed region");
            let fastest = times.iter().cloned().fold(f64::INFINITY, f64::min);
            if fastest >= 100.0 * granularity.as_secs_f64() || windows >= 1 << 20 {
                break (times, windows);
            }
            windows *= 2;
            log::info!("{name}: timer too coarse, batch raised to {windows} windows");
        };
        let symbols = (used * window.output_len) as f64;
        let mut ns: Vec<f64> = times.iter().map(|t| t * 1e9 / symbols).collect();
        ns.sort_by(f64::total_cmp);
        rows.push(BenchRow {
            model: name.to_string(),
            threads,
            median_ns_per_symbol: percentile(&ns, 0.5),
            p10: percentile(&ns, 0.1),
            p90: percentile(&ns, 0.9),
            speedup_vs_teacher: f64::NAN,
        });
    }
    Ok(rows)
}

/// Times `measured_iters` batched inferences per thread count on a pool of
/// exactly that many workers. Weights are compiled and inputs generated
/// before any timing starts.
pub fn bench_model(model: &Model, name: &str, cfg: &BenchConfig, window: &WindowSpec) -> Result<Vec<BenchRow>> {
    cfg.validate()?;
    model.spec().validate(window)?;
    match cfg.precision {
        Precision::Float32 => run_precision::<f32>(model, name, cfg, window),
        Precision::Float64 => run_precision::<f64>(model, name, cfg, window),
    }
}

/// Fills `speedup_vs_teacher` against the `teacher` row with the same thread
/// count (NaN when there is none).
pub fn emit_bench_report(mut rows: Vec<BenchRow>) -> Result<BenchReport> {
    if rows.is_empty() {
        return Err(Error::config("no benchmark rows"));
    }
    let teacher: Vec<(usize, f64)> = rows
        .iter()
        .filter(|r| r.model == "teacher")
        .map(|r| (r.threads, r.median_ns_per_symbol))
        .collect();
    let only_one = rows.len() == 1;
    for r in &mut rows {
        r.speedup_vs_teacher = if only_one {
            1.0
        } else {
            teacher
                .iter()
                .find(|(t, _)| *t == r.threads)
                .map_or(f64::NAN, |(_, tm)| tm / r.median_ns_per_symbol)
        };
    }
    Ok(BenchReport { rows })
}

impl BenchReport {
    pub fn row(&self, model: &str, threads: usize) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.model == model && r.threads == threads)
    }

    /// Percentage by which `model` is faster than the teacher at `threads`.
    pub fn reduction_pct(&self, model: &str, threads: usize) -> Option<f64> {
        let t = self.row("teacher", threads)?.median_ns_per_symbol;
        let m = self.row(model, threads)?.median_ns_per_symbol;
        Some(100.0 * (1.0 - m / t))
    }

    pub fn write_csv(&self, path: &Path, config_digest: &str) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "# config_digest: {config_digest}")?;
        let mut w = csv::Writer::from_writer(f);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary_json(&self, config_digest: &str) -> Result<String> {
        let reductions: Vec<serde_json::Value> = self
            .rows
            .iter()
            .filter(|r| r.model != "teacher")
            .filter_map(|r| {
                self.reduction_pct(&r.model, r.threads).map(|p| {
                    serde_json::json!({"model": r.model, "threads": r.threads, "reduction_pct": p})
                })
            })
            .collect();
        Ok(serde_json::to_string_pretty(&serde_json::json!({
            "config_digest": config_digest,
            "rows": self.rows,
            "reductions_vs_teacher": reductions,
        }))?)
    }
}
