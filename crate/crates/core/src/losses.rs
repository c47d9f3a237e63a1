//! The seven training losses, each returning its value together with the
//! gradient with respect to the logits.
//!
//! Per-example losses are averaged (not summed) over the batch so magnitudes
//! are comparable across batch sizes; this rescales gradients by 1/m and
//! does not change minimizers. Everything softmax-like routes through
//! max-shifted log-sum-exp; the raw exponential sum is never materialized.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{logsumexp_slice, sigmoid, softplus, Tensor};

/// A batch of logit vectors with labels: `z` is m x k, `y[i]` in `[0, k)`.
#[derive(Clone, Debug)]
pub struct LogitMatrix {
    z: Tensor,
    y: Vec<usize>,
}

impl LogitMatrix {
    pub fn new(z: Tensor, y: Vec<usize>) -> Result<LogitMatrix> {
        if z.rows() == 0 || z.cols() == 0 {
            return Err(Error::Domain("logit matrix must be at least 1x1".into()));
        }
        if y.len() != z.rows() {
            return Err(Error::Usage(format!(
                "{} labels for {} rows of logits",
                y.len(),
                z.rows()
            )));
        }
        if let Some(&bad) = y.iter().find(|&&l| l >= z.cols()) {
            return Err(Error::Index {
                what: "class label",
                index: bad,
                len: z.cols(),
            });
        }
        Ok(LogitMatrix { z, y })
    }

    pub fn m(&self) -> usize {
        self.z.rows()
    }

    pub fn k(&self) -> usize {
        self.z.cols()
    }

    pub fn logits(&self) -> &Tensor {
        &self.z
    }

    pub fn labels(&self) -> &[usize] {
        &self.y
    }

    pub fn logit(&self, i: usize, j: usize) -> f64 {
        self.z.get(i, j)
    }

    pub fn label(&self, i: usize) -> usize {
        self.y[i]
    }

    /// Row of logits for example `i`.
    pub fn row(&self, i: usize) -> &[f64] {
        self.z.row(i)
    }

    pub fn with_logits(&self, z: Tensor) -> Result<LogitMatrix> {
        LogitMatrix::new(z, self.y.clone())
    }
}

/// Which of the seven losses to use. Serializes as a lowercase string:
/// `ce`, `max_margin`, `self_norm`, `nce`, `binary_ce`, `batch_ce`,
/// `batch_max_margin`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Ce,
    MaxMargin,
    SelfNorm,
    Nce,
    BinaryCe,
    BatchCe,
    BatchMaxMargin,
}

impl LossKind {
    pub const ALL: [LossKind; 7] = [
        LossKind::Ce,
        LossKind::MaxMargin,
        LossKind::SelfNorm,
        LossKind::Nce,
        LossKind::BinaryCe,
        LossKind::BatchCe,
        LossKind::BatchMaxMargin,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Ce => "ce",
            LossKind::MaxMargin => "max_margin",
            LossKind::SelfNorm => "self_norm",
            LossKind::Nce => "nce",
            LossKind::BinaryCe => "binary_ce",
            LossKind::BatchCe => "batch_ce",
            LossKind::BatchMaxMargin => "batch_max_margin",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NceMode {
    #[default]
    Exact,
    MonteCarlo,
}

/// Loss selection plus hyperparameters. Fields irrelevant to the selected
/// kind are ignored.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Margin for the max-margin family.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Weight of the squared log-partition penalty in the
    /// self-normalization loss.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// NCE noise ratio.
    #[serde(default = "default_t")]
    pub t: u32,
    /// NCE noise distribution over the k classes; `None` means uniform.
    #[serde(default)]
    pub q: Option<Vec<f64>>,
    #[serde(default)]
    pub nce_mode: NceMode,
    #[serde(default = "default_mc_samples")]
    pub mc_samples: u32,
    #[serde(default)]
    pub mc_seed: u64,
}

fn default_gamma() -> f64 {
    1.0
}

fn default_alpha() -> f64 {
    0.1
}

fn default_t() -> u32 {
    5
}

fn default_mc_samples() -> u32 {
    100
}

impl LossConfig {
    pub fn new(kind: LossKind) -> LossConfig {
        LossConfig {
            kind,
            gamma: default_gamma(),
            alpha: default_alpha(),
            t: default_t(),
            q: None,
            nce_mode: NceMode::default(),
            mc_samples: default_mc_samples(),
            mc_seed: 0,
        }
    }

    /// Validate against a class count.
    pub fn validate(&self, k: usize) -> Result<()> {
        match self.kind {
            LossKind::MaxMargin | LossKind::BatchMaxMargin => {
                if self.gamma <= 0.0 {
                    return Err(Error::Domain(format!(
                        "margin gamma must be positive, got {}",
                        self.gamma
                    )));
                }
            }
            LossKind::SelfNorm => {
                if self.alpha < 0.0 {
                    return Err(Error::Domain(format!(
                        "self-normalization alpha must be >= 0, got {}",
                        self.alpha
                    )));
                }
            }
            LossKind::Nce => {
                if self.t == 0 {
                    return Err(Error::Domain("NCE noise ratio t must be >= 1".into()));
                }
                if self.mc_samples == 0 {
                    return Err(Error::Domain("mc_samples must be >= 1".into()));
                }
                if let Some(q) = &self.q {
                    validate_noise(q, k)?;
                }
            }
            _ => {}
        }
        Ok(())
    }
}

fn validate_noise(q: &[f64], k: usize) -> Result<()> {
    if q.len() != k {
        return Err(Error::Domain(format!(
            "noise distribution has {} entries for {k} classes",
            q.len()
        )));
    }
    if q.iter().any(|&p| p < 0.0) {
        return Err(Error::Domain("noise distribution has negative entries".into()));
    }
    let total: f64 = q.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!(
            "noise distribution sums to {total}, expected 1"
        )));
    }
    Ok(())
}

/// Scalar loss plus its gradient d(loss)/dz, shaped like the input logits.
/// `saturated` flags an NCE evaluation where some 1 - g_j underflowed the
/// naive formula (the stable form still returns the exact value).
#[derive(Clone, Debug)]
pub struct LossValue {
    pub loss: f64,
    pub grad: Tensor,
    pub saturated: bool,
}

impl LossValue {
    fn new(loss: f64, grad: Tensor) -> LossValue {
        LossValue {
            loss,
            grad,
            saturated: false,
        }
    }
}

// 1 - g_j below 1e-300 is where the naive log(1 - g_j) would blow up.
const SATURATION_LOG: f64 = -690.775527898;

/// Softmax cross-entropy: mean over examples of `-log p_y` with
/// `p_y = e^{z_y} / sum_j e^{z_j}`.
pub fn ce(lm: &LogitMatrix) -> LossValue {
    let (m, k) = (lm.m(), lm.k());
    let inv_m = 1.0 / m as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; m * k];
    for i in 0..m {
        let row = lm.row(i);
        let lse = logsumexp_slice(row);
        loss += lse - row[lm.label(i)];
        for (j, &z) in row.iter().enumerate() {
            grad[i * k + j] = (z - lse).exp() * inv_m;
        }
        grad[i * k + lm.label(i)] -= inv_m;
    }
    LossValue::new(loss * inv_m, Tensor::raw(m, k, grad))
}

/// Multiclass hinge: mean over examples of
/// `max(0, gamma - z_y + max_{j != y} z_j)`. The subgradient routes through
/// the single maximizing false logit; ties break to the lowest index, and
/// the hinge contributes no gradient at exactly zero.
pub fn max_margin(lm: &LogitMatrix, gamma: f64) -> Result<LossValue> {
    if gamma <= 0.0 {
        return Err(Error::Domain(format!("gamma must be positive, got {gamma}")));
    }
    if lm.k() < 2 {
        return Err(Error::Domain(
            "max-margin needs k >= 2: no false logits exist for k = 1".into(),
        ));
    }
    let (m, k) = (lm.m(), lm.k());
    let inv_m = 1.0 / m as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; m * k];
    for i in 0..m {
        let y = lm.label(i);
        let (jmax, zmax) = max_false(lm.row(i), y);
        let h = gamma - lm.logit(i, y) + zmax;
        if h > 0.0 {
            loss += h;
            grad[i * k + y] -= inv_m;
            grad[i * k + jmax] += inv_m;
        }
    }
    Ok(LossValue::new(loss * inv_m, Tensor::raw(m, k, grad)))
}

fn max_false(row: &[f64], y: usize) -> (usize, f64) {
    let mut best: Option<(usize, f64)> = None;
    for (j, &z) in row.iter().enumerate() {
        if j == y {
            continue;
        }
        if best.is_none_or(|(_, bz)| z > bz) {
            best = Some((j, z));
        }
    }
    best.expect("k >= 2 checked by caller")
}

/// Self-normalization: mean over examples of
/// `-log p_y + alpha * log^2(sum_j e^{z_j})`.
pub fn self_norm(lm: &LogitMatrix, alpha: f64) -> Result<LossValue> {
    if alpha < 0.0 {
        return Err(Error::Domain(format!("alpha must be >= 0, got {alpha}")));
    }
    let (m, k) = (lm.m(), lm.k());
    let inv_m = 1.0 / m as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; m * k];
    for i in 0..m {
        let row = lm.row(i);
        let lse = logsumexp_slice(row);
        loss += lse - row[lm.label(i)] + alpha * lse * lse;
        let factor = (1.0 + 2.0 * alpha * lse) * inv_m;
        for (j, &z) in row.iter().enumerate() {
            grad[i * k + j] = (z - lse).exp() * factor;
        }
        grad[i * k + lm.label(i)] -= inv_m;
    }
    Ok(LossValue::new(loss * inv_m, Tensor::raw(m, k, grad)))
}

/// Noise-contrastive estimation: mean over examples of
/// `-log g_y - t * E_{j~q}[log(1 - g_j)]` with
/// `g_j = (1 + t q(j) e^{-z_j})^{-1}`.
///
/// The expectation ranges over all of q, including j = y. Exact mode sums
/// it; Monte-Carlo mode draws `mc_samples` classes from q with the seeded
/// generator and averages, scaling by t.
#[allow(clippy::too_many_arguments)]
pub fn nce(
    lm: &LogitMatrix,
    t: u32,
    q: &[f64],
    mode: NceMode,
    mc_samples: u32,
    mc_seed: u64,
) -> Result<LossValue> {
    if t == 0 {
        return Err(Error::Domain("NCE noise ratio t must be >= 1".into()));
    }
    let (m, k) = (lm.m(), lm.k());
    validate_noise(q, k)?;
    let inv_m = 1.0 / m as f64;
    let tf = t as f64;
    // ln(t * q_j) for classes with mass; zero-mass classes contribute
    // nothing to either term (g_j = 1 there, so log g and log(1 - g)
    // vanish from the objective).
    let ln_tq: Vec<Option<f64>> = q
        .iter()
        .map(|&p| if p > 0.0 { Some((tf * p).ln()) } else { None })
        .collect();

    let mut loss = 0.0;
    let mut grad = vec![0.0; m * k];
    let mut saturated = false;

    // u_j = ln(t q_j) - z_j, so g_j = sigmoid(-u_j):
    //   -log g_j     = softplus(u_j)
    //   -log(1-g_j)  = softplus(-u_j)
    for i in 0..m {
        let row = lm.row(i);
        let y = lm.label(i);
        if let Some(ltq) = ln_tq[y] {
            let u = ltq - row[y];
            loss += softplus(u) * inv_m;
            grad[i * k + y] += (sigmoid(-u) - 1.0) * inv_m;
        }
        match mode {
            NceMode::Exact => {
                for (j, &z) in row.iter().enumerate() {
                    let Some(ltq) = ln_tq[j] else { continue };
                    let u = ltq - z;
                    if u < SATURATION_LOG {
                        saturated = true;
                    }
                    loss += tf * q[j] * softplus(-u) * inv_m;
                    grad[i * k + j] += tf * q[j] * sigmoid(-u) * inv_m;
                }
            }
            NceMode::MonteCarlo => {
                if mc_samples == 0 {
                    return Err(Error::Domain("mc_samples must be >= 1".into()));
                }
                // Every example draws from its own derived stream, so the
                // result is reproducible for a fixed seed.
                let mut rng = Rng::derive(mc_seed, i as u64);
                let (support, cdf) = noise_cdf(q);
                let w = tf / mc_samples as f64 * inv_m;
                for _ in 0..mc_samples {
                    let j = support[rng.sample_cdf(&cdf)];
                    let u = ln_tq[j].expect("support classes have mass");
                    let u = u - row[j];
                    if u < SATURATION_LOG {
                        saturated = true;
                    }
                    loss += w * softplus(-u);
                    grad[i * k + j] += w * sigmoid(-u);
                }
            }
        }
    }
    Ok(LossValue {
        loss,
        grad: Tensor::raw(m, k, grad),
        saturated,
    })
}

/// Support indices and cumulative masses of the positive-mass classes.
fn noise_cdf(q: &[f64]) -> (Vec<usize>, Vec<f64>) {
    let mut support = Vec::new();
    let mut cdf = Vec::new();
    let mut acc = 0.0;
    for (j, &p) in q.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            support.push(j);
            cdf.push(acc);
        }
    }
    (support, cdf)
}

/// One-vs-rest sigmoid cross-entropy reduced to the multiclass setting:
/// mean over examples of `-log sigma(z_y) - sum_{j != y} log(1 - sigma(z_j))`,
/// computed in the stable softplus form.
pub fn binary_ce(lm: &LogitMatrix) -> LossValue {
    let (m, k) = (lm.m(), lm.k());
    let inv_m = 1.0 / m as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; m * k];
    for i in 0..m {
        let y = lm.label(i);
        for (j, &z) in lm.row(i).iter().enumerate() {
            if j == y {
                loss += softplus(-z);
                grad[i * k + j] = (sigmoid(z) - 1.0) * inv_m;
            } else {
                loss += softplus(z);
                grad[i * k + j] = sigmoid(z) * inv_m;
            }
        }
    }
    LossValue::new(loss * inv_m, Tensor::raw(m, k, grad))
}

/// Batch cross-entropy: KL(P_B || Q_B) where P_B puts mass 1/m on each true
/// cell and Q_B is the softmax over all m*k logits of the batch jointly.
/// Evaluates to `-(1/m) sum_i z_{y_i} + logsumexp(all logits) - log m`.
pub fn batch_ce(lm: &LogitMatrix) -> LossValue {
    let (m, k) = (lm.m(), lm.k());
    let inv_m = 1.0 / m as f64;
    let lse = logsumexp_slice(lm.logits().data());
    let mut true_sum = 0.0;
    let mut grad = vec![0.0; m * k];
    for i in 0..m {
        true_sum += lm.logit(i, lm.label(i));
        for (j, &z) in lm.row(i).iter().enumerate() {
            grad[i * k + j] = (z - lse).exp();
        }
        grad[i * k + lm.label(i)] -= inv_m;
    }
    let loss = lse - true_sum * inv_m - (m as f64).ln();
    LossValue::new(loss, Tensor::raw(m, k, grad))
}

/// Batch max-margin: `(1/m) max(0, gamma - z+ + z-)` plus `(1/m)` times the
/// sum of per-example hinges, where z+ is the minimal true logit and z- the
/// maximal false logit of the batch. The batch-term subgradient routes
/// through the unique argmin/argmax; ties break to the lowest example index,
/// then the lowest class index.
pub fn batch_max_margin(lm: &LogitMatrix, gamma: f64) -> Result<LossValue> {
    if gamma <= 0.0 {
        return Err(Error::Domain(format!("gamma must be positive, got {gamma}")));
    }
    if lm.k() < 2 {
        return Err(Error::Domain(
            "batch max-margin needs k >= 2: no false logits exist for k = 1".into(),
        ));
    }
    let (m, k) = (lm.m(), lm.k());
    let inv_m = 1.0 / m as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; m * k];

    let mut z_plus = f64::INFINITY;
    let mut arg_plus = (0, 0);
    let mut z_minus = f64::NEG_INFINITY;
    let mut arg_minus = (0, 0);

    for i in 0..m {
        let y = lm.label(i);
        let row = lm.row(i);
        if row[y] < z_plus {
            z_plus = row[y];
            arg_plus = (i, y);
        }
        for (j, &z) in row.iter().enumerate() {
            if j != y && z > z_minus {
                z_minus = z;
                arg_minus = (i, j);
            }
        }
        // per-example hinge, as in the plain max-margin loss
        let (jmax, zmax) = max_false(row, y);
        let h = gamma - row[y] + zmax;
        if h > 0.0 {
            loss += h * inv_m;
            grad[i * k + y] -= inv_m;
            grad[i * k + jmax] += inv_m;
        }
    }

    let h_batch = gamma - z_plus + z_minus;
    if h_batch > 0.0 {
        loss += h_batch * inv_m;
        grad[arg_plus.0 * k + arg_plus.1] -= inv_m;
        grad[arg_minus.0 * k + arg_minus.1] += inv_m;
    }
    Ok(LossValue::new(loss, Tensor::raw(m, k, grad)))
}

/// Route a [`LossConfig`] to the matching loss.
pub fn loss_dispatch(config: &LossConfig, lm: &LogitMatrix) -> Result<LossValue> {
    config.validate(lm.k())?;
    match config.kind {
        LossKind::Ce => Ok(ce(lm)),
        LossKind::MaxMargin => max_margin(lm, config.gamma),
        LossKind::SelfNorm => self_norm(lm, config.alpha),
        LossKind::Nce => {
            let uniform;
            let q: &[f64] = match &config.q {
                Some(q) => q,
                None => {
                    uniform = vec![1.0 / lm.k() as f64; lm.k()];
                    &uniform
                }
            };
            nce(lm, config.t, q, config.nce_mode, config.mc_samples, config.mc_seed)
        }
        LossKind::BinaryCe => Ok(binary_ce(lm)),
        LossKind::BatchCe => Ok(batch_ce(lm)),
        LossKind::BatchMaxMargin => batch_max_margin(lm, config.gamma),
    }
}
