//! Independent oracles for the integration and acceptance suites.
//!
//! Everything here is written directly from the defining formulas, with raw
//! exponential sums and explicit probability tables - no log-sum-exp
//! shifting, no softplus forms - so it shares no numerics with the library
//! code it checks. Only valid on moderate inputs where the naive forms do
//! not overflow.

#![allow(dead_code)]

use logitsep_core::losses::LogitMatrix;

// ---- finite differences -----------------------------------------------------

/// Central finite-difference gradient of a scalar function of a flat vector.
pub fn finite_diff_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut grad = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        grad.push((up - down) / (2.0 * h));
    }
    grad
}

/// Relative-error gradient comparison: passes when every component agrees
/// within `rel` relatively, or `abs` absolutely near zero.
pub fn gradients_match(analytic: &[f64], numeric: &[f64], rel: f64, abs: f64) -> Result<(), String> {
    if analytic.len() != numeric.len() {
        return Err(format!("length {} vs {}", analytic.len(), numeric.len()));
    }
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let scale = a.abs().max(n.abs());
        let diff = (a - n).abs();
        if diff > abs && diff > rel * scale {
            return Err(format!("component {i}: analytic {a} vs numeric {n} (diff {diff})"));
        }
    }
    Ok(())
}

// ---- naive loss evaluators ---------------------------------------------------

fn softmax_prob(row: &[f64], j: usize) -> f64 {
    let denom: f64 = row.iter().map(|&z| z.exp()).sum();
    row[j].exp() / denom
}

pub fn naive_ce(lm: &LogitMatrix) -> f64 {
    let mut total = 0.0;
    for i in 0..lm.m() {
        total += -softmax_prob(lm.row(i), lm.label(i)).ln();
    }
    total / lm.m() as f64
}

pub fn naive_max_margin(lm: &LogitMatrix, gamma: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..lm.m() {
        let row = lm.row(i);
        let y = lm.label(i);
        let max_false = row
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != y)
            .map(|(_, &z)| z)
            .fold(f64::NEG_INFINITY, f64::max);
        total += (gamma - row[y] + max_false).max(0.0);
    }
    total / lm.m() as f64
}

pub fn naive_self_norm(lm: &LogitMatrix, alpha: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..lm.m() {
        let row = lm.row(i);
        let z_sum: f64 = row.iter().map(|&z| z.exp()).sum();
        total += -softmax_prob(row, lm.label(i)).ln() + alpha * z_sum.ln().powi(2);
    }
    total / lm.m() as f64
}

pub fn naive_nce_exact(lm: &LogitMatrix, t: u32, q: &[f64]) -> f64 {
    let tf = t as f64;
    let g = |j: usize, z: f64| 1.0 / (1.0 + tf * q[j] * (-z).exp());
    let mut total = 0.0;
    for i in 0..lm.m() {
        let row = lm.row(i);
        let y = lm.label(i);
        let mut loss = if q[y] > 0.0 { -g(y, row[y]).ln() } else { 0.0 };
        let mut expectation = 0.0;
        for (j, &z) in row.iter().enumerate() {
            if q[j] > 0.0 {
                expectation += q[j] * (1.0 - g(j, z)).ln();
            }
        }
        loss -= tf * expectation;
        total += loss;
    }
    total / lm.m() as f64
}

pub fn naive_binary_ce(lm: &LogitMatrix) -> f64 {
    let sigma = |z: f64| 1.0 / (1.0 + (-z).exp());
    let mut total = 0.0;
    for i in 0..lm.m() {
        let row = lm.row(i);
        let y = lm.label(i);
        let mut loss = -sigma(row[y]).ln();
        for (j, &z) in row.iter().enumerate() {
            if j != y {
                loss -= (1.0 - sigma(z)).ln();
            }
        }
        total += loss;
    }
    total / lm.m() as f64
}

/// KL(P_B || Q_B) with both distributions over (example, class) cells built
/// explicitly.
pub fn naive_batch_ce(lm: &LogitMatrix) -> f64 {
    let (m, k) = (lm.m(), lm.k());
    let z_total: f64 = lm
        .logits()
        .data()
        .iter()
        .map(|&z| z.exp())
        .sum();
    let mut kl = 0.0;
    for i in 0..m {
        for j in 0..k {
            let p = if j == lm.label(i) { 1.0 / m as f64 } else { 0.0 };
            if p > 0.0 {
                let q = lm.logit(i, j).exp() / z_total;
                kl += p * (p / q).ln();
            }
        }
    }
    kl
}

pub fn naive_batch_max_margin(lm: &LogitMatrix, gamma: f64) -> f64 {
    let m = lm.m() as f64;
    let mut z_plus = f64::INFINITY;
    let mut z_minus = f64::NEG_INFINITY;
    for i in 0..lm.m() {
        let y = lm.label(i);
        for (j, &z) in lm.row(i).iter().enumerate() {
            if j == y {
                z_plus = z_plus.min(z);
            } else {
                z_minus = z_minus.max(z);
            }
        }
    }
    let batch_term = (gamma - z_plus + z_minus).max(0.0) / m;
    // per-example sum reuses the naive per-example hinge, un-averaged
    let per_example: f64 = naive_max_margin(lm, gamma) * m;
    batch_term + per_example / m
}

// ---- brute-force precision-recall --------------------------------------------

/// All curve points by the O(n^2) definition: for every distinct score s
/// (descending), predict positive on `score >= s` by full scan.
pub fn brute_force_pr_points(scores: &[f64], labels: &[bool]) -> Vec<(f64, f64, f64)> {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let positives = labels.iter().filter(|&&l| l).count() as f64;
    let mut points = Vec::new();
    for &s in &thresholds {
        let mut tp = 0.0;
        let mut fp = 0.0;
        for (i, &sc) in scores.iter().enumerate() {
            if sc >= s {
                if labels[i] {
                    tp += 1.0;
                } else {
                    fp += 1.0;
                }
            }
        }
        points.push((s, tp / (tp + fp), tp / positives));
    }
    points
}

/// Average precision over the brute-force sweep (step rule).
pub fn brute_force_ap(scores: &[f64], labels: &[bool]) -> f64 {
    let points = brute_force_pr_points(scores, labels);
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for (_, precision, recall) in points {
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    area
}

/// Precision at the largest threshold with recall >= r, by brute force.
pub fn brute_force_p_at_r(scores: &[f64], labels: &[bool], r: f64) -> f64 {
    for (_, precision, recall) in brute_force_pr_points(scores, labels) {
        if recall >= r {
            return precision;
        }
    }
    unreachable!("recall 1 always reachable")
}

// ---- brute-force pair violations ----------------------------------------------

/// Fraction of (true logit, false logit) pairs with true <= false, by the
/// O((m*k)^2) double loop.
pub fn brute_force_violation_fraction(lm: &LogitMatrix) -> f64 {
    let mut true_logits = Vec::new();
    let mut false_logits = Vec::new();
    for i in 0..lm.m() {
        for (j, &z) in lm.row(i).iter().enumerate() {
            if j == lm.label(i) {
                true_logits.push(z);
            } else {
                false_logits.push(z);
            }
        }
    }
    let mut violations = 0usize;
    for &t in &true_logits {
        for &f in &false_logits {
            if t <= f {
                violations += 1;
            }
        }
    }
    violations as f64 / (true_logits.len() * false_logits.len()) as f64
}
