//! Minibatch SGD training with learning-rate grid search.
//!
//! Plain SGD, no momentum or weight decay, so the loss comparison stays
//! uncontaminated by optimizer state. For the batch losses the sampled
//! minibatch *is* the batch the loss couples: the loss consumes exactly the
//! logits of the minibatch drawn by the sampler each step.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{BatchSampler, Dataset};
use crate::error::{Error, Result};
use crate::losses::{loss_dispatch, LogitMatrix, LossConfig};
use crate::network::{MlpModel, Mode};
use crate::pols::separation;
use crate::rng::Rng;
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossConfig,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    pub steps: usize,
    #[serde(default = "default_learning_rates")]
    pub learning_rates: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    /// History cadence in steps.
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    /// Size of the fixed probe batch used for the separation-margin column.
    #[serde(default = "default_probe_size")]
    pub probe_size: usize,
}

fn default_batch_size() -> usize {
    64
}

fn default_learning_rates() -> Vec<f64> {
    vec![1.0, 0.1, 0.01, 0.001]
}

fn default_hidden() -> Vec<usize> {
    vec![500, 500]
}

fn default_log_every() -> usize {
    100
}

fn default_probe_size() -> usize {
    256
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Domain("steps must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Domain("batch size must be >= 1".into()));
        }
        if self.learning_rates.is_empty() {
            return Err(Error::Domain("need at least one learning rate".into()));
        }
        if let Some(&bad) = self.learning_rates.iter().find(|&&lr| lr <= 0.0 || lr.is_nan()) {
            return Err(Error::Domain(format!("learning rates must be positive, got {bad}")));
        }
        if self.log_every == 0 {
            return Err(Error::Domain("log_every must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct HistoryRow {
    pub step: usize,
    pub loss: f64,
    pub val_acc: f64,
    pub probe_margin: f64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct TrainHistory {
    pub rows: Vec<HistoryRow>,
}

impl TrainHistory {
    /// CSV serialization: `step,loss,val_acc,probe_margin`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "step,loss,val_acc,probe_margin")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{}", r.step, r.loss, r.val_acc, r.probe_margin)?;
        }
        Ok(())
    }
}

/// Classification accuracy by full-logit argmax (ties to the lowest index).
pub fn accuracy(model: &MlpModel, data: &Dataset) -> Result<f64> {
    let logits = model.forward_all(data.features(), Mode::Inference)?;
    let mut correct = 0usize;
    for i in 0..data.n() {
        let row = logits.row(i);
        let mut best = 0usize;
        for (j, &z) in row.iter().enumerate().skip(1) {
            if z > row[best] {
                best = j;
            }
        }
        if best == data.label(i) {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.n() as f64)
}

// stream ids for the per-run generators
const STREAM_SAMPLER: u64 = 1;
const STREAM_PROBE: u64 = 2;
const STREAM_MC: u64 = 3;

/// One SGD run at a fixed learning rate. Deterministic for a fixed config
/// seed: init, batch order and Monte-Carlo draws all derive from it.
pub fn train_with_lr(
    config: &TrainConfig,
    lr: f64,
    train_set: &Dataset,
    val_set: &Dataset,
) -> Result<(MlpModel, TrainHistory)> {
    config.validate()?;
    if train_set.k() == 0 {
        return Err(Error::Domain("empty dataset".into()));
    }
    let mut model = MlpModel::init(train_set.d(), &config.hidden, train_set.k(), config.seed)?;
    let mut sampler = BatchSampler::new(
        train_set.n(),
        config.batch_size,
        mix_seed(config.seed, STREAM_SAMPLER),
    )?;

    // fixed probe batch for the separation-margin column
    let probe_idx: Vec<usize> = {
        let mut rng = Rng::derive(config.seed, STREAM_PROBE);
        let mut all: Vec<usize> = (0..train_set.n()).collect();
        rng.shuffle(&mut all);
        all.truncate(config.probe_size.min(train_set.n()));
        all
    };
    let probe = train_set.subset(&probe_idx, train_set.split)?;

    let mut history = TrainHistory::default();
    let mut last_finite = f64::NAN;
    let d = train_set.d();

    for step in 0..config.steps {
        let batch_idx = sampler.next_batch();
        let mut data = Vec::with_capacity(batch_idx.len() * d);
        let mut labels = Vec::with_capacity(batch_idx.len());
        for &i in &batch_idx {
            data.extend_from_slice(train_set.feature_row(i));
            labels.push(train_set.label(i));
        }
        let batch = Tensor::raw(batch_idx.len(), d, data);

        let mut tape = Tape::new();
        let graph = model.forward_train(&mut tape, &batch)?;
        let lm = LogitMatrix::new(tape.value(graph.logits).clone(), labels)?;

        // fresh Monte-Carlo draws every step, still seed-deterministic
        let mut loss_cfg = config.loss.clone();
        loss_cfg.mc_seed = mix_seed(mix_seed(config.loss.mc_seed, STREAM_MC), step as u64);
        let value = loss_dispatch(&loss_cfg, &lm)?;
        if !value.loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: step + 1,
                last_loss: last_finite,
            });
        }
        last_finite = value.loss;

        let grads = tape.backward_seeded(graph.logits, value.grad)?;
        let mut slot = 0usize;
        model.visit_params_mut(|p| {
            if let Some(g) = grads.get(graph.params[slot]) {
                for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                    *pv -= lr * gv;
                }
            }
            slot += 1;
        });
        model.update_running_stats(&graph.batch_stats);

        let done = step + 1;
        if done % config.log_every == 0 || done == config.steps {
            let val_acc = accuracy(&model, val_set)?;
            let probe_margin = if train_set.k() >= 2 {
                let logits = model.forward_all(probe.features(), Mode::Inference)?;
                separation(&LogitMatrix::new(logits, probe.labels().to_vec())?)?.margin
            } else {
                f64::NAN
            };
            history.rows.push(HistoryRow {
                step: done,
                loss: value.loss,
                val_acc,
                probe_margin,
            });
        }
    }
    Ok((model, history))
}

/// Train with the first configured learning rate.
pub fn train(
    config: &TrainConfig,
    train_set: &Dataset,
    val_set: &Dataset,
) -> Result<(MlpModel, TrainHistory)> {
    config.validate()?;
    train_with_lr(config, config.learning_rates[0], train_set, val_set)
}

#[derive(Clone, Debug, Serialize)]
pub struct LrSummary {
    pub lr: f64,
    pub val_acc: Option<f64>,
    pub final_loss: Option<f64>,
    pub diverged: bool,
    pub divergence_step: Option<usize>,
}

pub struct GridOutcome {
    pub model: MlpModel,
    pub history: TrainHistory,
    pub best_lr: f64,
    pub summaries: Vec<LrSummary>,
}

/// Train one model per learning rate and keep the one with the best
/// validation accuracy (ties go to the smaller rate). Runs are independent
/// and execute in parallel, each with its own model and generators.
pub fn grid_search(
    config: &TrainConfig,
    train_set: &Dataset,
    val_set: &Dataset,
) -> Result<GridOutcome> {
    config.validate()?;
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let runs: Vec<(f64, Result<(MlpModel, TrainHistory)>)> = if cores > 1 {
        std::thread::scope(|scope| {
            let handles: Vec<_> = config
                .learning_rates
                .iter()
                .map(|&lr| {
                    scope.spawn(move || (lr, train_with_lr(config, lr, train_set, val_set)))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("train thread")).collect()
        })
    } else {
        config
            .learning_rates
            .iter()
            .map(|&lr| (lr, train_with_lr(config, lr, train_set, val_set)))
            .collect()
    };

    let mut summaries = Vec::with_capacity(runs.len());
    let mut best: Option<(f64, f64, MlpModel, TrainHistory)> = None;
    for (lr, outcome) in runs {
        match outcome {
            Ok((model, history)) => {
                let val_acc = accuracy(&model, val_set)?;
                summaries.push(LrSummary {
                    lr,
                    val_acc: Some(val_acc),
                    final_loss: history.rows.last().map(|r| r.loss),
                    diverged: false,
                    divergence_step: None,
                });
                let better = match &best {
                    None => true,
                    Some((best_acc, best_lr, _, _)) => {
                        val_acc > *best_acc || (val_acc == *best_acc && lr < *best_lr)
                    }
                };
                if better {
                    best = Some((val_acc, lr, model, history));
                }
            }
            Err(Error::NonFiniteLoss { step, last_loss }) => {
                summaries.push(LrSummary {
                    lr,
                    val_acc: None,
                    final_loss: if last_loss.is_finite() { Some(last_loss) } else { None },
                    diverged: true,
                    divergence_step: Some(step),
                });
            }
            Err(e) => return Err(e),
        }
    }
    match best {
        Some((_, best_lr, model, history)) => Ok(GridOutcome {
            model,
            history,
            best_lr,
            summaries,
        }),
        None => Err(Error::AllRunsDiverged(format!(
            "{} learning rate(s) tried",
            summaries.len()
        ))),
    }
}

fn mix_seed(seed: u64, stream: u64) -> u64 {
    // one SplitMix64 output, used purely for stream separation
    let mut rng = Rng::derive(seed, stream);
    rng.next_u64()
}
