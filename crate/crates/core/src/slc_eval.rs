//! Single-logit classification metrics: per-class precision-recall curves,
//! AUPRC (average-precision convention) and precision at fixed recall, with
//! unweighted per-class averages.
//!
//! The classification rule is `score > T` (strictly greater). One curve
//! point is emitted per distinct observed score s, describing the prediction
//! set `{score >= s}` - the set realized by any threshold just below s -
//! so tied scores enter and leave the prediction set together.

use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::LogitMatrix;
use crate::network::{MlpModel, Mode};
use crate::pols::{separation, SeparationReport};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Serialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Precision-recall curve for one class, points ordered by decreasing
/// threshold (so recall is non-decreasing along the list).
#[derive(Clone, Debug, Serialize)]
pub struct PRCurve {
    pub class_id: usize,
    pub points: Vec<PrPoint>,
    pub positives: usize,
    pub negatives: usize,
}

/// Build the PR curve of one class from per-example scores and binary
/// labels. Needs at least one positive and one negative example.
pub fn pr_curve(scores: &[f64], labels: &[bool], class_id: usize) -> Result<PRCurve> {
    if scores.len() != labels.len() {
        return Err(Error::Usage(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Domain(format!(
            "class {class_id} needs at least one positive and one negative example \
             ({positives} positive, {negatives} negative)"
        )));
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Domain(format!("non-finite score {bad} for class {class_id}")));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());

    let mut points = Vec::new();
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        // consume the whole tie group
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(PrPoint {
            threshold: s,
            precision: tp as f64 / (tp + fp) as f64,
            recall: tp as f64 / positives as f64,
        });
    }
    Ok(PRCurve {
        class_id,
        points,
        positives,
        negatives,
    })
}

/// Area under the PR curve in the average-precision (step interpolation)
/// convention: sum over points, in decreasing-threshold order, of
/// `(R_n - R_{n-1}) * P_n` with `R_0 = 0`.
pub fn auprc(curve: &PRCurve) -> f64 {
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for p in &curve.points {
        area += (p.recall - prev_recall) * p.precision;
        prev_recall = p.recall;
    }
    area
}

/// Precision at the largest threshold whose recall is at least `r`
/// (the fewest predicted positives achieving that recall). Recall 1 is
/// always reachable at the lowest observed score, so this always exists.
pub fn precision_at_recall(curve: &PRCurve, r: f64) -> Result<f64> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::Domain(format!("recall target must be in (0, 1], got {r}")));
    }
    for p in &curve.points {
        if p.recall >= r {
            return Ok(p.precision);
        }
    }
    unreachable!("the final curve point always has recall 1");
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub auprc: f64,
    pub p_at_090: f64,
    pub p_at_099: f64,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct MetricSummary {
    pub auprc: f64,
    pub p_at_090: f64,
    pub p_at_099: f64,
}

/// Per-class and averaged single-logit accuracy metrics. `one_minus_macro`
/// carries the complements (1 - metric), the reporting convention used for
/// near-1 metrics.
#[derive(Clone, Debug, Serialize)]
pub struct SlcReport {
    pub per_class: Vec<ClassMetrics>,
    #[serde(rename = "macro")]
    pub macro_avg: MetricSummary,
    pub one_minus_macro: MetricSummary,
    pub warnings: Vec<String>,
}

impl SlcReport {
    /// Assemble a report from per-class metrics (macro = unweighted mean).
    pub fn from_classes(per_class: Vec<ClassMetrics>, warnings: Vec<String>) -> Result<SlcReport> {
        if per_class.is_empty() {
            return Err(Error::Domain("no class had both positives and negatives".into()));
        }
        let n = per_class.len() as f64;
        let macro_avg = MetricSummary {
            auprc: per_class.iter().map(|c| c.auprc).sum::<f64>() / n,
            p_at_090: per_class.iter().map(|c| c.p_at_090).sum::<f64>() / n,
            p_at_099: per_class.iter().map(|c| c.p_at_099).sum::<f64>() / n,
        };
        let one_minus_macro = MetricSummary {
            auprc: 1.0 - macro_avg.auprc,
            p_at_090: 1.0 - macro_avg.p_at_090,
            p_at_099: 1.0 - macro_avg.p_at_099,
        };
        Ok(SlcReport {
            per_class,
            macro_avg,
            one_minus_macro,
            warnings,
        })
    }
}

/// How to score class membership for the PR sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Score class j by the raw logit z_j alone (computable per class at
    /// cost independent of the class count).
    SingleLogit,
    /// Score class j by the softmax-normalized probability, which requires
    /// every logit.
    AllLogitsSoftmax,
}

/// Evaluate a model on a dataset in the selected scoring mode. Classes with
/// no positive (or no negative) test examples are skipped with a warning
/// recorded in the report.
pub fn evaluate_slc(model: &MlpModel, data: &Dataset, mode: EvalMode) -> Result<SlcReport> {
    let scores = score_matrix(model, data, mode)?;
    let mut per_class = Vec::new();
    let mut warnings = Vec::new();
    let mut col = vec![0.0; data.n()];
    let mut labels = vec![false; data.n()];
    for class in 0..data.k() {
        for i in 0..data.n() {
            col[i] = scores.get(i, class);
            labels[i] = data.label(i) == class;
        }
        match pr_curve(&col, &labels, class) {
            Ok(curve) => per_class.push(ClassMetrics {
                class,
                auprc: auprc(&curve),
                p_at_090: precision_at_recall(&curve, 0.9)?,
                p_at_099: precision_at_recall(&curve, 0.99)?,
            }),
            Err(Error::Domain(msg)) => warnings.push(format!("class {class} skipped: {msg}")),
            Err(e) => return Err(e),
        }
    }
    SlcReport::from_classes(per_class, warnings)
}

/// n x k score matrix for the dataset under the given mode. The single-logit
/// score of class j is bit-identical to `forward_single(x, j)`, so scoring
/// from the full forward pass is exact.
fn score_matrix(model: &MlpModel, data: &Dataset, mode: EvalMode) -> Result<Tensor> {
    if data.d() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            op: "evaluate_slc",
            lhs_rows: data.n(),
            lhs_cols: data.d(),
            rhs_rows: model.input_dim(),
            rhs_cols: model.num_classes(),
        });
    }
    if data.k() != model.num_classes() {
        return Err(Error::Usage(format!(
            "dataset has {} classes but the model outputs {}",
            data.k(),
            model.num_classes()
        )));
    }
    let logits = model.forward_all(data.features(), Mode::Inference)?;
    match mode {
        EvalMode::SingleLogit => Ok(logits),
        EvalMode::AllLogitsSoftmax => {
            let (n, k) = logits.shape();
            let mut out = vec![0.0; n * k];
            for i in 0..n {
                let row = logits.row(i);
                let lse = crate::tensor::logsumexp_slice(row);
                for (j, &z) in row.iter().enumerate() {
                    out[i * k + j] = (z - lse).exp();
                }
            }
            Ok(Tensor::raw(n, k, out))
        }
    }
}

/// Separation report for the model's logits on a dataset (the labeled logit
/// set of Definition-style diagnostics).
pub fn separation_on_dataset(model: &MlpModel, data: &Dataset) -> Result<SeparationReport> {
    let logits = model.forward_all(data.features(), Mode::Inference)?;
    let lm = LogitMatrix::new(logits, data.labels().to_vec())?;
    separation(&lm)
}
