//! Logit-separation diagnostics: measure how well true logits separate from
//! false logits on a labeled logit set, reproduce the constructions on which
//! per-example losses fail to separate, and probe each loss by descending on
//! free logits.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::losses::{loss_dispatch, LogitMatrix, LossConfig, LossKind};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Separation statistics over a labeled logit set. A logit is *true* when
/// its class is the label of its example, *false* otherwise; the margin is
/// positive exactly when every true logit exceeds every false logit.
#[derive(Clone, Debug, Serialize)]
pub struct SeparationReport {
    pub min_true_logit: f64,
    pub max_false_logit: f64,
    /// `min_true_logit - max_false_logit`.
    pub margin: f64,
    /// Fraction of (true, false) logit pairs with true <= false.
    /// Non-strict, since separation requires strict inequality.
    pub violating_pair_fraction: f64,
    pub n_true: usize,
    pub n_false: usize,
}

/// Exact separation extremes and pair-violation fraction in
/// O(m*k log(m*k)).
pub fn separation(lm: &LogitMatrix) -> Result<SeparationReport> {
    if lm.k() < 2 {
        return Err(Error::Domain(
            "separation needs k >= 2: no false logits exist for k = 1".into(),
        ));
    }
    let (m, k) = (lm.m(), lm.k());
    let mut true_logits = Vec::with_capacity(m);
    let mut false_logits = Vec::with_capacity(m * (k - 1));
    for i in 0..m {
        let y = lm.label(i);
        for (j, &z) in lm.row(i).iter().enumerate() {
            if j == y {
                true_logits.push(z);
            } else {
                false_logits.push(z);
            }
        }
    }

    let min_true = true_logits.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_false = false_logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    false_logits.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut violations: u64 = 0;
    for &t in &true_logits {
        // violating pairs for this true logit: false logits >= t
        let below = false_logits.partition_point(|&f| f < t);
        violations += (false_logits.len() - below) as u64;
    }
    let n_true = true_logits.len();
    let n_false = false_logits.len();
    Ok(SeparationReport {
        min_true_logit: min_true,
        max_false_logit: max_false,
        margin: min_true - max_false,
        violating_pair_fraction: violations as f64 / (n_true as f64 * n_false as f64),
        n_true,
        n_false,
    })
}

/// The two-example, two-class configuration on which cross-entropy attains
/// arbitrarily small loss while separation stays violated:
/// `z(x1) = (2a, a)` with label 0 and `z(x2) = (-2a, -a)` with label 1.
pub fn counterexample_ce(alpha: f64) -> Result<LogitMatrix> {
    if alpha <= 0.0 {
        return Err(Error::Domain(format!("alpha must be positive, got {alpha}")));
    }
    let z = Tensor::from_vec(2, 2, vec![2.0 * alpha, alpha, -2.0 * alpha, -alpha])?;
    LogitMatrix::new(z, vec![0, 1])
}

/// Same configuration with `alpha = gamma`, where the plain max-margin loss
/// is exactly zero with zero gradient.
pub fn counterexample_margin(gamma: f64) -> Result<LogitMatrix> {
    counterexample_ce(gamma)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Aligned,
    NotAligned,
    Inconclusive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StartKind {
    Random,
    Counterexample,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrialOutcome {
    pub start: StartKind,
    pub final_loss: f64,
    pub final_margin: f64,
    pub diverged: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct AlignmentReport {
    pub kind: LossKind,
    pub verdict: Verdict,
    pub trials: Vec<TrialOutcome>,
}

#[derive(Clone, Debug)]
pub struct AlignmentOptions {
    /// Number of random-start descents.
    pub trials: usize,
    pub steps: usize,
    pub step_size: f64,
    pub seed: u64,
    /// Shape of the random-start logit sets.
    pub examples: usize,
    pub classes: usize,
}

impl Default for AlignmentOptions {
    fn default() -> Self {
        AlignmentOptions {
            trials: 10,
            steps: 5000,
            step_size: 0.1,
            seed: 0,
            examples: 4,
            classes: 3,
        }
    }
}

pub struct DescentOutcome {
    pub logits: LogitMatrix,
    pub final_loss: f64,
    pub final_margin: f64,
    /// Loss increased for 100 consecutive steps, or became non-finite.
    pub diverged: bool,
}

/// Plain gradient descent on free logits. This deliberately bypasses the
/// trainer's SGD so the probe isolates the loss landscape from sampling
/// noise.
pub fn descend_logits(
    config: &LossConfig,
    start: &LogitMatrix,
    steps: usize,
    step_size: f64,
) -> Result<DescentOutcome> {
    let mut z = start.logits().clone();
    let mut lm = start.clone();
    let mut last_loss = f64::INFINITY;
    let mut rising = 0usize;
    let mut diverged = false;
    let mut value = loss_dispatch(config, &lm)?;
    for _ in 0..steps {
        if !value.loss.is_finite() {
            diverged = true;
            break;
        }
        if value.loss > last_loss {
            rising += 1;
            if rising >= 100 {
                diverged = true;
                break;
            }
        } else {
            rising = 0;
        }
        last_loss = value.loss;

        for (zi, gi) in z.data_mut().iter_mut().zip(value.grad.data()) {
            *zi -= step_size * gi;
        }
        if !z.is_finite() {
            diverged = true;
            break;
        }
        lm = lm.with_logits(z.clone())?;
        value = loss_dispatch(config, &lm)?;
    }
    let margin = separation(&lm)?.margin;
    Ok(DescentOutcome {
        logits: lm,
        final_loss: value.loss,
        final_margin: margin,
        diverged,
    })
}

/// Seeded random logit set with every class represented (labels assigned
/// round-robin), entries uniform in [-1, 1].
pub fn random_start(examples: usize, classes: usize, rng: &mut Rng) -> Result<LogitMatrix> {
    let data: Vec<f64> = (0..examples * classes).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let labels: Vec<usize> = (0..examples).map(|i| i % classes).collect();
    LogitMatrix::new(Tensor::from_vec(examples, classes, data)?, labels)
}

/// Descend on free logits from `trials` seeded random starts plus the
/// counter-example start, and classify the loss:
///
/// * `Aligned` - every descent ends with margin > 0,
/// * `NotAligned` - some descent converges but leaves the violation intact,
/// * `Inconclusive` - some descent diverged.
///
/// For the margin losses the counter-example uses `alpha = gamma` (where the
/// plain hinge is exactly zero); the other losses are started at
/// `counterexample_ce(10)`.
pub fn check_alignment(config: &LossConfig, opts: &AlignmentOptions) -> Result<AlignmentReport> {
    if opts.trials < 1 {
        return Err(Error::Domain("alignment check needs at least one trial".into()));
    }
    let mut trials = Vec::with_capacity(opts.trials + 1);
    for trial in 0..opts.trials {
        let mut rng = Rng::derive(opts.seed, trial as u64);
        let start = random_start(opts.examples, opts.classes, &mut rng)?;
        let out = descend_logits(config, &start, opts.steps, opts.step_size)?;
        trials.push(TrialOutcome {
            start: StartKind::Random,
            final_loss: out.final_loss,
            final_margin: out.final_margin,
            diverged: out.diverged,
        });
    }

    let counter = match config.kind {
        LossKind::MaxMargin | LossKind::BatchMaxMargin => counterexample_margin(config.gamma)?,
        _ => counterexample_ce(10.0)?,
    };
    let out = descend_logits(config, &counter, opts.steps, opts.step_size)?;
    trials.push(TrialOutcome {
        start: StartKind::Counterexample,
        final_loss: out.final_loss,
        final_margin: out.final_margin,
        diverged: out.diverged,
    });

    let verdict = if trials.iter().any(|t| t.diverged) {
        Verdict::Inconclusive
    } else if trials.iter().all(|t| t.final_margin > 0.0) {
        Verdict::Aligned
    } else {
        Verdict::NotAligned
    };
    Ok(AlignmentReport {
        kind: config.kind,
        verdict,
        trials,
    })
}
