//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//! Run with `cargo test -p logitsep-core --test acceptance -- --nocapture`
//! to see the lines; criteria hold the suite lock so the timing-sensitive
//! ones are never polluted by concurrent work in this binary.

mod common;

use std::path::PathBuf;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use common::*;
use logitsep_core::bench::{fit_line, run_bench, BenchConfig};
use logitsep_core::data::{load_idx, split, synth_blobs, Dataset, SplitTag};
use logitsep_core::losses::*;
use logitsep_core::pols::{check_alignment, counterexample_ce, separation, AlignmentOptions, Verdict};
use logitsep_core::rng::Rng;
use logitsep_core::slc_eval::{evaluate_slc, pr_curve, auprc, EvalMode};
use logitsep_core::tensor::Tensor;
use logitsep_core::trainer::{grid_search, train, TrainConfig};

static SUITE: Mutex<()> = Mutex::new(());

fn suite_lock() -> MutexGuard<'static, ()> {
    SUITE.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

fn criterion<F: FnOnce() + std::panic::UnwindSafe>(n: u32, name: &str, body: F) {
    let result = std::panic::catch_unwind(body);
    match result {
        Ok(()) => println!("criterion {n} ({name}): PASS"),
        Err(payload) => {
            println!("criterion {n} ({name}): FAIL");
            std::panic::resume_unwind(payload);
        }
    }
}

fn lm(m: usize, k: usize, z: &[f64], y: &[usize]) -> LogitMatrix {
    LogitMatrix::new(Tensor::from_vec(m, k, z.to_vec()).unwrap(), y.to_vec()).unwrap()
}

fn random_lm(rng: &mut Rng) -> LogitMatrix {
    let m = 1 + rng.index(5);
    let k = 2 + rng.index(6);
    let z: Vec<f64> = (0..m * k).map(|_| rng.uniform(-3.0, 3.0)).collect();
    let y: Vec<usize> = (0..m).map(|_| rng.index(k)).collect();
    lm(m, k, &z, &y)
}

/// Keep finite-difference probes of the piecewise-linear losses away from
/// hinge kinks and argmax ties.
fn hinge_safe(lmat: &LogitMatrix, gamma: f64) -> bool {
    let tol = 1e-3;
    let mut z_plus = f64::INFINITY;
    let mut z_minus = f64::NEG_INFINITY;
    let mut trues: Vec<f64> = Vec::new();
    let mut falses_all: Vec<f64> = Vec::new();
    for i in 0..lmat.m() {
        let y = lmat.label(i);
        let row = lmat.row(i);
        let mut falses: Vec<f64> = row
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != y)
            .map(|(_, &z)| z)
            .collect();
        falses.sort_by(|a, b| b.partial_cmp(a).unwrap());
        if falses.len() > 1 && (falses[0] - falses[1]).abs() < tol {
            return false;
        }
        if (gamma - row[y] + falses[0]).abs() < tol {
            return false;
        }
        z_plus = z_plus.min(row[y]);
        z_minus = z_minus.max(falses[0]);
        trues.push(row[y]);
        falses_all.extend(falses);
    }
    trues.sort_by(|a, b| a.partial_cmp(b).unwrap());
    falses_all.sort_by(|a, b| b.partial_cmp(a).unwrap());
    if trues.len() > 1 && (trues[1] - trues[0]).abs() < tol {
        return false;
    }
    if falses_all.len() > 1 && (falses_all[0] - falses_all[1]).abs() < tol {
        return false;
    }
    (gamma - z_plus + z_minus).abs() > tol
}

// ---- criterion 1 --------------------------------------------------------------

#[test]
fn criterion_01_gradient_suite() {
    let _g = suite_lock();
    criterion(1, "gradient suite, 7 losses x 100 inputs", || {
        let t0 = Instant::now();
        for (kind, seed) in LossKind::ALL.into_iter().zip(201u64..) {
            let mut cfg = LossConfig::new(kind);
            cfg.gamma = 1.0;
            cfg.alpha = 0.7;
            cfg.t = 3;
            cfg.mc_samples = 16;
            cfg.mc_seed = 5;
            let mut rng = Rng::new(seed);
            let mut done = 0;
            while done < 100 {
                let base = random_lm(&mut rng);
                if matches!(kind, LossKind::MaxMargin | LossKind::BatchMaxMargin)
                    && !hinge_safe(&base, cfg.gamma)
                {
                    continue;
                }
                let value = loss_dispatch(&cfg, &base).unwrap();
                let labels = base.labels().to_vec();
                let (m, k) = (base.m(), base.k());
                let cfg_ref = &cfg;
                let f = move |flat: &[f64]| {
                    let z = Tensor::from_vec(m, k, flat.to_vec()).unwrap();
                    loss_dispatch(cfg_ref, &LogitMatrix::new(z, labels.clone()).unwrap())
                        .unwrap()
                        .loss
                };
                let numeric = finite_diff_gradient(&f, base.logits().data(), 1e-5);
                gradients_match(value.grad.data(), &numeric, 1e-5, 1e-8)
                    .unwrap_or_else(|e| panic!("{} input {done}: {e}", kind.name()));
                done += 1;
            }
        }
        let dt = t0.elapsed();
        assert!(dt.as_secs() < 60, "gradient suite took {dt:?}, budget 1 minute");
    });
}

// ---- criterion 2 --------------------------------------------------------------

#[test]
fn criterion_02_closed_form_loss_oracles() {
    let _g = suite_lock();
    criterion(2, "closed-form loss values vs brute-force oracle", || {
        let tol = 1e-6;

        let m = lm(1, 3, &[1.0, 2.0, 3.0], &[2]);
        let got = ce(&m).loss;
        assert!((got - naive_ce(&m)).abs() < 1e-9);
        assert!((got - 0.407606).abs() < tol, "ce: {got}");

        let m = lm(1, 2, &[0.0, 0.0], &[0]);
        let got = self_norm(&m, 1.0).unwrap().loss;
        assert!((got - naive_self_norm(&m, 1.0)).abs() < 1e-9);
        assert!((got - 1.173600).abs() < tol, "self_norm: {got}");

        let q = [0.5, 0.5];
        let got = nce(&m, 1, &q, NceMode::Exact, 1, 0).unwrap().loss;
        assert!((got - naive_nce_exact(&m, 1, &q)).abs() < 1e-9);
        assert!((got - 1.504077).abs() < tol, "nce: {got}");

        let got = binary_ce(&m).loss;
        assert!((got - naive_binary_ce(&m)).abs() < 1e-9);
        assert!((got - 1.386294).abs() < tol, "binary_ce: {got}");

        let wide = lm(1, 2, &[10.0, -10.0], &[0]);
        let got = binary_ce(&wide).loss;
        assert!((got - naive_binary_ce(&wide)).abs() < 1e-9);
        assert!((got - 9.07979e-5).abs() < tol, "binary_ce wide: {got}");

        let batch = lm(2, 2, &[0.0, 0.0, 0.0, 0.0], &[0, 1]);
        let got = batch_ce(&batch).loss;
        assert!((got - naive_batch_ce(&batch)).abs() < 1e-9);
        assert!((got - 2f64.ln()).abs() < tol, "batch_ce: {got}");

        let construction = counterexample_ce(1.0).unwrap();
        let got = batch_max_margin(&construction, 1.0).unwrap().loss;
        assert!((got - naive_batch_max_margin(&construction, 1.0)).abs() < 1e-9);
        assert!((got - 1.5).abs() < tol, "batch_max_margin: {got}");

        let margin_case = lm(1, 3, &[0.5, 1.0, -1.0], &[1]);
        let got = max_margin(&margin_case, 2.0).unwrap().loss;
        assert!((got - naive_max_margin(&margin_case, 2.0)).abs() < 1e-9);
        assert!((got - 1.5).abs() < tol, "max_margin: {got}");
    });
}

// ---- criterion 3 --------------------------------------------------------------

#[test]
fn criterion_03_counterexample_regressions() {
    let _g = suite_lock();
    criterion(3, "per-example losses vanish while separation fails", || {
        let t0 = Instant::now();
        for alpha in [0.5, 1.0, 2.0, 5.0, 10.0, 20.0] {
            let m = counterexample_ce(alpha).unwrap();
            let expected = (-alpha).exp().ln_1p();
            assert!((ce(&m).loss - expected).abs() < 1e-9);
            let rep = separation(&m).unwrap();
            assert!((rep.margin + 2.0 * alpha).abs() < 1e-12);
            assert!(rep.margin < 0.0);

            // alpha doubles as gamma: the hinge is exactly zero there
            let v = max_margin(&m, alpha).unwrap();
            assert_eq!(v.loss, 0.0);
            assert!(v.grad.data().iter().all(|&g| g == 0.0));

            let bmm = batch_max_margin(&m, alpha).unwrap().loss;
            assert!(bmm >= alpha / 2.0, "batch hinge too small: {bmm}");
        }
        let dt = t0.elapsed();
        assert!(dt.as_secs_f64() < 1.0, "counter-example suite took {dt:?}, budget 1 second");
    });
}

// ---- criterion 4 --------------------------------------------------------------

#[test]
fn criterion_04_alignment_verdicts() {
    let _g = suite_lock();
    criterion(4, "descent classifies the seven losses", || {
        let t0 = Instant::now();
        let opts = AlignmentOptions {
            trials: 10,
            steps: 5000,
            step_size: 0.1,
            seed: 1234,
            examples: 4,
            classes: 3,
        };
        for kind in LossKind::ALL {
            let mut cfg = LossConfig::new(kind);
            cfg.gamma = 1.0;
            cfg.alpha = 0.1;
            cfg.t = 2;
            let report = check_alignment(&cfg, &opts).unwrap();
            let expected = match kind {
                LossKind::Ce | LossKind::MaxMargin => Verdict::NotAligned,
                _ => Verdict::Aligned,
            };
            assert_eq!(
                report.verdict,
                expected,
                "{}: margins {:?}",
                kind.name(),
                report.trials.iter().map(|t| t.final_margin).collect::<Vec<_>>()
            );
        }
        let dt = t0.elapsed();
        assert!(dt.as_secs() < 120, "alignment suite took {dt:?}, budget 2 minutes");
    });
}

// ---- criterion 5 --------------------------------------------------------------

#[test]
fn criterion_05_batch_ce_reduction() {
    let _g = suite_lock();
    criterion(5, "batch cross-entropy at m=1 equals cross-entropy", || {
        let mut rng = Rng::new(500);
        for _ in 0..100 {
            let k = 1 + rng.index(7);
            let z: Vec<f64> = (0..k).map(|_| rng.uniform(-3.0, 3.0)).collect();
            let y = vec![rng.index(k)];
            let m = lm(1, k, &z, &y);
            let a = batch_ce(&m);
            let b = ce(&m);
            assert!(
                (a.loss - b.loss).abs() < 1e-12,
                "batch_ce {} vs ce {}",
                a.loss,
                b.loss
            );
            for (x, yv) in a.grad.data().iter().zip(b.grad.data()) {
                assert!((x - yv).abs() < 1e-12);
            }
        }
    });
}

// ---- criterion 6 --------------------------------------------------------------

#[test]
fn criterion_06_auprc_oracle_equivalence() {
    let _g = suite_lock();
    criterion(6, "fast AUPRC equals the O(n^2) sweep", || {
        let mut rng = Rng::new(600);
        for case in 0..200 {
            let n = 2 + rng.index(199);
            let (scores, labels) = loop {
                let scores: Vec<f64> = (0..n)
                    .map(|_| {
                        if rng.next_f64() < 0.4 {
                            (rng.index(7) as f64) * 0.25
                        } else {
                            rng.uniform(-2.0, 2.0)
                        }
                    })
                    .collect();
                let labels: Vec<bool> = (0..n).map(|_| rng.next_f64() < 0.3).collect();
                let pos = labels.iter().filter(|&&l| l).count();
                if pos > 0 && pos < n {
                    break (scores, labels);
                }
            };
            let curve = pr_curve(&scores, &labels, 0).unwrap();
            let fast = auprc(&curve);
            let brute = brute_force_ap(&scores, &labels);
            assert!(
                (fast - brute).abs() < 1e-9,
                "case {case}: fast {fast} vs brute {brute}"
            );
        }
    });
}

// ---- criteria 7 and 8: the desk-scale experiment --------------------------------

// Thresholds for the synthetic fallback, pinned by the first derived run of
// this experiment (synth_blobs k=10, per_class=1000, d=64, spread=0.5,
// seeds 7/8001; MLP 500-500, batch norm, ReLU, 2e4 steps, batch 64, LR grid
// {1, 0.1, 0.01, 0.001}). That run measured: ce 1-AUPRC 1.10e-4 with test
// margin -2.63, batch_ce 1-AUPRC 0.0 with margin -0.18, parity gap 0.0;
// the pipeline is seed-deterministic, so reruns reproduce those numbers.
const SYNTH_CE_ONE_MINUS_AUPRC_CAP: f64 = 0.05;
const SYNTH_RATIO_CAP: f64 = 0.5;
const PARITY_CAP: f64 = 0.02;

struct ExperimentOutcome {
    used_mnist: bool,
    ce_one_minus_auprc: f64,
    batch_ce_one_minus_auprc: f64,
    /// |macro AUPRC(batch_ce model, single logit) -
    ///  macro AUPRC(ce model, all-logits softmax)|
    parity_gap: f64,
    runtime_s: f64,
}

fn mnist_dir() -> Option<PathBuf> {
    let candidates = [
        std::env::var_os("MNIST_DIR").map(PathBuf::from),
        Some(PathBuf::from("data/mnist")),
    ];
    candidates.into_iter().flatten().find(|dir| {
        dir.join("train-images-idx3-ubyte").exists()
            && dir.join("train-labels-idx1-ubyte").exists()
            && dir.join("t10k-images-idx3-ubyte").exists()
            && dir.join("t10k-labels-idx1-ubyte").exists()
    })
}

fn load_experiment_data() -> (Dataset, Dataset, bool) {
    if let Some(dir) = mnist_dir() {
        let train = load_idx(
            &dir.join("train-images-idx3-ubyte"),
            &dir.join("train-labels-idx1-ubyte"),
            SplitTag::Train,
        )
        .unwrap();
        let test = load_idx(
            &dir.join("t10k-images-idx3-ubyte"),
            &dir.join("t10k-labels-idx1-ubyte"),
            SplitTag::Test,
        )
        .unwrap();
        (train, test, true)
    } else {
        let train = synth_blobs(10, 1000, 64, 0.5, 7).unwrap();
        let test = synth_blobs(10, 200, 64, 0.5, 8001).unwrap();
        (train, test, false)
    }
}

fn experiment() -> &'static ExperimentOutcome {
    static OUTCOME: OnceLock<ExperimentOutcome> = OnceLock::new();
    OUTCOME.get_or_init(|| {
        let t0 = Instant::now();
        let (full_train, test, used_mnist) = load_experiment_data();
        let (train_set, val_set) = split(&full_train, 0.1, 42).unwrap();

        let run = |kind: LossKind| {
            let cfg = TrainConfig {
                loss: LossConfig::new(kind),
                batch_size: 64,
                steps: 20_000,
                learning_rates: vec![1.0, 0.1, 0.01, 0.001],
                seed: 3,
                hidden: vec![500, 500],
                log_every: 100,
                probe_size: 256,
            };
            grid_search(&cfg, &train_set, &val_set).unwrap()
        };
        let ce_out = run(LossKind::Ce);
        let bce_out = run(LossKind::BatchCe);

        let ce_single = evaluate_slc(&ce_out.model, &test, EvalMode::SingleLogit).unwrap();
        let ce_softmax = evaluate_slc(&ce_out.model, &test, EvalMode::AllLogitsSoftmax).unwrap();
        let bce_single = evaluate_slc(&bce_out.model, &test, EvalMode::SingleLogit).unwrap();

        let outcome = ExperimentOutcome {
            used_mnist,
            ce_one_minus_auprc: ce_single.one_minus_macro.auprc,
            batch_ce_one_minus_auprc: bce_single.one_minus_macro.auprc,
            parity_gap: (bce_single.macro_avg.auprc - ce_softmax.macro_avg.auprc).abs(),
            runtime_s: t0.elapsed().as_secs_f64(),
        };
        println!(
            "experiment [{}]: ce 1-AUPRC {:.6}, batch_ce 1-AUPRC {:.6}, parity gap {:.6} ({:.0}s)",
            if outcome.used_mnist { "mnist" } else { "synth" },
            outcome.ce_one_minus_auprc,
            outcome.batch_ce_one_minus_auprc,
            outcome.parity_gap,
            outcome.runtime_s
        );
        outcome
    })
}

#[test]
fn criterion_07_desk_scale_slc_reproduction() {
    let _g = suite_lock();
    criterion(7, "batch CE halves the single-logit error of CE", || {
        let exp = experiment();
        assert!(
            exp.ce_one_minus_auprc <= SYNTH_CE_ONE_MINUS_AUPRC_CAP,
            "ce 1-AUPRC {} above cap {}",
            exp.ce_one_minus_auprc,
            SYNTH_CE_ONE_MINUS_AUPRC_CAP
        );
        assert!(
            exp.batch_ce_one_minus_auprc <= SYNTH_RATIO_CAP * exp.ce_one_minus_auprc,
            "batch_ce 1-AUPRC {} not <= {} x ce's {}",
            exp.batch_ce_one_minus_auprc,
            SYNTH_RATIO_CAP,
            exp.ce_one_minus_auprc
        );
    });
}

#[test]
fn criterion_08_single_logit_parity_with_all_logits() {
    let _g = suite_lock();
    criterion(8, "single-logit batch CE matches all-logits CE", || {
        let exp = experiment();
        assert!(
            exp.parity_gap <= PARITY_CAP,
            "macro AUPRC differs by {} (cap {PARITY_CAP})",
            exp.parity_gap
        );
    });
}

// ---- criterion 9 --------------------------------------------------------------

#[test]
fn criterion_09_speedup_law() {
    let _g = suite_lock();
    criterion(9, "full-logit cost linear in k, single-logit cost flat", || {
        let config = BenchConfig {
            hidden: vec![512],
            input_dim: 512,
            classes: vec![1, 64, 1 << 10, 1 << 12, 1 << 14, 1 << 16, 1 << 18],
            batch_size: 32,
            repetitions: 10,
            warmup: 3,
            seed: 9,
        };
        let report = run_bench(&config).unwrap();
        let sweep: Vec<_> = report.rows.iter().filter(|r| r.classes >= 1 << 10).collect();
        assert_eq!(sweep.len(), 5);

        let pts: Vec<(f64, f64)> = sweep
            .iter()
            .map(|r| (r.classes as f64, r.time_per_example_s))
            .collect();
        let fit = fit_line(&pts).unwrap();
        assert!(fit.r_squared >= 0.95, "R^2 = {}", fit.r_squared);
        assert!(fit.per_class_cost > 0.0, "b = {}", fit.per_class_cost);

        let single: Vec<f64> = sweep.iter().map(|r| r.single_logit_time_s).collect();
        let (lo, hi) = single
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &t| (lo.min(t), hi.max(t)));
        assert!(
            hi / lo <= 1.25,
            "single-logit time varies {:.1}% across the sweep: {single:?}",
            100.0 * (hi / lo - 1.0)
        );

        for pair in sweep.windows(2) {
            assert!(
                pair[1].speedup >= pair[0].speedup,
                "speedup not monotone: {} at k={} vs {} at k={}",
                pair[0].speedup,
                pair[0].classes,
                pair[1].speedup,
                pair[1].classes
            );
        }

        // sign test over paired repetitions: the slope is positive with 95%
        // confidence when the largest-k rep beats the smallest-k rep in at
        // least 9 of 10 pairs (one-sided binomial tail 0.011)
        let lo_samples = &sweep.first().unwrap().full_samples_s;
        let hi_samples = &sweep.last().unwrap().full_samples_s;
        let wins = lo_samples
            .iter()
            .zip(hi_samples)
            .filter(|(lo, hi)| hi > lo)
            .count();
        assert!(
            wins >= 9,
            "per-class cost not positive at 95% confidence: {wins}/10 pairs increased"
        );

        // single-logit cost is also flat from 2^6 up to 2^18
        let t64 = report.rows.iter().find(|r| r.classes == 64).unwrap().single_logit_time_s;
        let t18 = report
            .rows
            .iter()
            .find(|r| r.classes == 1 << 18)
            .unwrap()
            .single_logit_time_s;
        let ratio = t18 / t64;
        assert!(
            (0.8..=1.25).contains(&ratio),
            "single-logit time ratio 2^18 / 2^6 = {ratio}"
        );

        // with no backbone at all, the full-logit cost is a line through
        // the origin
        let bare = BenchConfig {
            hidden: vec![],
            input_dim: 512,
            classes: vec![1, 1 << 10, 1 << 12, 1 << 14, 1 << 16],
            batch_size: 32,
            repetitions: 10,
            warmup: 3,
            seed: 10,
        };
        let report = run_bench(&bare).unwrap();
        let pts: Vec<(f64, f64)> = report
            .rows
            .iter()
            .filter(|r| r.classes > 1)
            .map(|r| (r.classes as f64, r.time_per_example_s))
            .collect();
        let fit = fit_line(&pts).unwrap();
        assert!(fit.r_squared >= 0.95, "bare-backbone R^2 = {}", fit.r_squared);
        assert!(fit.per_class_cost > 0.0);
        let smallest = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        assert!(
            fit.fixed_cost.abs() <= 0.25 * smallest,
            "intercept {:.3e} not near the origin (smallest time {:.3e})",
            fit.fixed_cost,
            smallest
        );
    });
}

// ---- criterion 10 ---------------------------------------------------------------

#[test]
fn criterion_10_bitwise_determinism() {
    let _g = suite_lock();
    criterion(10, "same seed, same bits", || {
        // training with batch norm and Monte-Carlo NCE exercises every
        // stochastic path
        let ds = synth_blobs(3, 60, 8, 0.5, 21).unwrap();
        let (tr, va) = split(&ds, 0.2, 4).unwrap();
        let mut cfg = TrainConfig {
            loss: LossConfig::new(LossKind::Nce),
            batch_size: 16,
            steps: 200,
            learning_rates: vec![0.1],
            seed: 77,
            hidden: vec![12],
            log_every: 50,
            probe_size: 32,
        };
        cfg.loss.nce_mode = NceMode::MonteCarlo;
        cfg.loss.mc_samples = 8;
        cfg.loss.mc_seed = 13;

        let (model_a, hist_a) = train(&cfg, &tr, &va).unwrap();
        let (model_b, hist_b) = train(&cfg, &tr, &va).unwrap();
        assert!(model_a.bits_eq(&model_b), "parameters differ between identical runs");
        for (ra, rb) in hist_a.rows.iter().zip(&hist_b.rows) {
            assert_eq!(ra.loss.to_bits(), rb.loss.to_bits());
            assert_eq!(ra.val_acc.to_bits(), rb.val_acc.to_bits());
            assert_eq!(ra.probe_margin.to_bits(), rb.probe_margin.to_bits());
        }

        // checkpoint bytes are identical too
        let dir = std::env::temp_dir();
        let pa = dir.join(format!("logitsep_det_a_{}.ckpt", std::process::id()));
        let pb = dir.join(format!("logitsep_det_b_{}.ckpt", std::process::id()));
        model_a.save(&pa, Some(&cfg.loss)).unwrap();
        model_b.save(&pb, Some(&cfg.loss)).unwrap();
        assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());
        std::fs::remove_file(pa).ok();
        std::fs::remove_file(pb).ok();

        // Monte-Carlo evaluation repeats bit-identically
        let m = lm(2, 3, &[0.5, -1.0, 0.3, 1.0, 0.2, -0.7], &[0, 2]);
        let q = [0.2, 0.5, 0.3];
        let a = nce(&m, 2, &q, NceMode::MonteCarlo, 64, 9).unwrap();
        let b = nce(&m, 2, &q, NceMode::MonteCarlo, 64, 9).unwrap();
        assert_eq!(a.loss.to_bits(), b.loss.to_bits());
        assert!(a.grad.bits_eq(&b.grad));
    });
}
