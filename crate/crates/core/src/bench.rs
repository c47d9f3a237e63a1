//! Forward-pass timing harness: full-logit cost as a function of the class
//! count versus the k-independent single-logit baseline.
//!
//! Absolute numbers are hardware-specific and are not the contract; the
//! harness reproduces the shape of the law - constant single-logit cost,
//! full-logit cost linear in the class count, speedup growing with k - on a
//! synthetic backbone with random-noise inputs and randomly initialized,
//! untrained models. Runs are strictly sequential and single-threaded.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::MlpModel;
use crate::network::Mode;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchConfig {
    /// Hidden widths of the synthetic backbone standing in for a real
    /// feature extractor; its cost is independent of the class count.
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_input_dim")]
    pub input_dim: usize,
    /// Class counts to sweep, ascending, first entry 1 (the SLC baseline row).
    #[serde(default = "default_classes")]
    pub classes: Vec<usize>,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Timed minibatches per class count.
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    /// Discarded minibatches before timing starts.
    #[serde(default = "default_warmup")]
    pub warmup: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_hidden() -> Vec<usize> {
    vec![1024, 1024]
}

fn default_input_dim() -> usize {
    512
}

fn default_classes() -> Vec<usize> {
    // 1, 2^10, 2^14, 2^16, 2^18 and 2^18.5 rounded
    vec![1, 1 << 10, 1 << 14, 1 << 16, 1 << 18, 370_728]
}

fn default_batch_size() -> usize {
    32
}

fn default_repetitions() -> usize {
    100
}

fn default_warmup() -> usize {
    10
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            hidden: default_hidden(),
            input_dim: default_input_dim(),
            classes: default_classes(),
            batch_size: default_batch_size(),
            repetitions: default_repetitions(),
            warmup: default_warmup(),
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions < 10 {
            return Err(Error::Domain(format!(
                "need at least 10 repetitions, got {}",
                self.repetitions
            )));
        }
        if self.classes.is_empty() || self.classes[0] != 1 {
            return Err(Error::Domain(
                "class counts must start with 1 (the single-logit baseline row)".into(),
            ));
        }
        if self.classes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Domain("class counts must be strictly ascending".into()));
        }
        if self.batch_size == 0 || self.input_dim == 0 {
            return Err(Error::Domain("batch size and input width must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchRow {
    pub classes: usize,
    /// Mean per-example forward time in seconds. For the `classes = 1` row
    /// this is the single-logit (SLC) baseline; for the others it is the
    /// full-logit pass.
    pub time_per_example_s: f64,
    pub std_s: f64,
    /// Mean per-example single-logit time at this class count, for the
    /// k-independence check.
    pub single_logit_time_s: f64,
    pub single_logit_std_s: f64,
    /// `time_per_example_s / slc baseline`; 1 by definition on the first row.
    pub speedup: f64,
    /// Raw per-repetition samples (seconds per example), so dispersion
    /// claims are auditable.
    pub full_samples_s: Vec<f64>,
    pub single_samples_s: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct EnvRecord {
    pub hardware: String,
    pub float_width: u32,
    pub threading: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub environment: EnvRecord,
    pub timer_resolution_s: f64,
    /// Set when the timer resolution is coarser than 1% of the smallest
    /// measured interval.
    pub low_confidence: bool,
}

impl BenchReport {
    /// CSV with the sweep's axes: `classes,time_per_example_s,speedup`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "classes,time_per_example_s,speedup")?;
        for r in &self.rows {
            writeln!(w, "{},{},{}", r.classes, r.time_per_example_s, r.speedup)?;
        }
        Ok(())
    }
}

fn timer_resolution() -> f64 {
    let mut min = f64::INFINITY;
    for _ in 0..200 {
        let t0 = Instant::now();
        let mut dt = t0.elapsed();
        while dt.is_zero() {
            dt = t0.elapsed();
        }
        min = min.min(dt.as_secs_f64());
    }
    min
}

fn cpu_model() -> String {
    if let Ok(text) = std::fs::read_to_string("/proc/cpuinfo") {
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix("model name") {
                if let Some((_, name)) = rest.split_once(':') {
                    return name.trim().to_string();
                }
            }
        }
    }
    "unknown".to_string()
}

/// Time complete forward passes over noise minibatches for every class count
/// in the sweep. Each class count gets a freshly initialized, untrained model
/// over the same backbone spec; the first row (classes = 1) is the SLC
/// baseline that every speedup is measured against.
pub fn run_bench(config: &BenchConfig) -> Result<BenchReport> {
    config.validate()?;
    let resolution = timer_resolution();
    let mut rows: Vec<BenchRow> = Vec::with_capacity(config.classes.len());
    let mut min_interval = f64::INFINITY;
    let mut slc_baseline = f64::NAN;

    for &k in &config.classes {
        let model = MlpModel::init(config.input_dim, &config.hidden, k, mix(config.seed, k as u64))?;
        let mut noise_rng = Rng::derive(config.seed, 0x6e_6f69_7365 ^ k as u64);
        let make_batch = |rng: &mut Rng| {
            Tensor::raw(
                config.batch_size,
                config.input_dim,
                (0..config.batch_size * config.input_dim)
                    .map(|_| rng.uniform(0.0, 1.0))
                    .collect(),
            )
        };
        // pre-generate inputs so generation cost stays outside the timings
        let batches: Vec<Tensor> =
            (0..config.repetitions).map(|_| make_batch(&mut noise_rng)).collect();
        let rows_of: Vec<Vec<Tensor>> = batches
            .iter()
            .map(|b| (0..config.batch_size).map(|i| b.row_tensor(i)).collect())
            .collect();
        let mut class_rng = Rng::derive(config.seed, 0x63_6c61_7373 ^ k as u64);
        let query_classes: Vec<Vec<usize>> = (0..config.repetitions)
            .map(|_| (0..config.batch_size).map(|_| class_rng.index(k)).collect())
            .collect();

        for batch in batches.iter().take(config.warmup.min(batches.len())) {
            std::hint::black_box(model.forward_all(batch, Mode::Inference)?);
        }

        let mut full_samples = Vec::with_capacity(config.repetitions);
        for batch in &batches {
            let t0 = Instant::now();
            let out = model.forward_all(batch, Mode::Inference)?;
            let dt = t0.elapsed().as_secs_f64();
            std::hint::black_box(out);
            min_interval = min_interval.min(dt);
            full_samples.push(dt / config.batch_size as f64);
        }

        for (rows, classes) in rows_of.iter().zip(&query_classes).take(config.warmup) {
            for (x, &j) in rows.iter().zip(classes) {
                std::hint::black_box(model.forward_single(x, j)?);
            }
        }
        let mut single_samples = Vec::with_capacity(config.repetitions);
        for (rows, classes) in rows_of.iter().zip(&query_classes) {
            let t0 = Instant::now();
            for (x, &j) in rows.iter().zip(classes) {
                std::hint::black_box(model.forward_single(x, j)?);
            }
            let dt = t0.elapsed().as_secs_f64();
            min_interval = min_interval.min(dt);
            single_samples.push(dt / config.batch_size as f64);
        }

        let (single_mean, single_std) = mean_std(&single_samples);
        let (full_mean, full_std) = mean_std(&full_samples);
        let (time, std, speedup) = if k == 1 {
            slc_baseline = single_mean;
            (single_mean, single_std, 1.0)
        } else {
            (full_mean, full_std, full_mean / slc_baseline)
        };
        rows.push(BenchRow {
            classes: k,
            time_per_example_s: time,
            std_s: std,
            single_logit_time_s: single_mean,
            single_logit_std_s: single_std,
            speedup,
            full_samples_s: full_samples,
            single_samples_s: single_samples,
        });
    }

    Ok(BenchReport {
        rows,
        environment: EnvRecord {
            hardware: cpu_model(),
            float_width: 64,
            threading: "single-threaded".into(),
        },
        timer_resolution_s: resolution,
        low_confidence: resolution > 0.01 * min_interval,
    })
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn mix(seed: u64, salt: u64) -> u64 {
    Rng::derive(seed, salt).next_u64()
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct CostFit {
    /// Fixed (backbone) cost in seconds.
    pub fixed_cost: f64,
    /// Marginal cost per class in seconds.
    pub per_class_cost: f64,
    pub r_squared: f64,
}

/// Least-squares fit `time(k) = a + b*k` over the full-logit rows
/// (classes > 1). Needs at least 3 distinct class counts.
pub fn fit_cost_model(report: &BenchReport) -> Result<CostFit> {
    let pts: Vec<(f64, f64)> = report
        .rows
        .iter()
        .filter(|r| r.classes > 1)
        .map(|r| (r.classes as f64, r.time_per_example_s))
        .collect();
    fit_line(&pts)
}

/// Least-squares line fit with R-squared.
pub fn fit_line(pts: &[(f64, f64)]) -> Result<CostFit> {
    if pts.len() < 3 {
        return Err(Error::Fit(format!(
            "need at least 3 class counts, got {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mean_x = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mean_x) * (p.0 - mean_x)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("degenerate sweep: all class counts equal".into()));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    let b = sxy / sxx;
    let a = mean_y - b * mean_x;
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - mean_y) * (p.1 - mean_y)).sum();
    let ss_res: f64 = pts.iter().map(|p| (p.1 - (a + b * p.0)) * (p.1 - (a + b * p.0))).sum();
    let r_squared = if ss_tot == 0.0 {
        if ss_res == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - ss_res / ss_tot
    };
    Ok(CostFit {
        fixed_cost: a,
        per_class_cost: b,
        r_squared,
    })
}
