//! Property tests over randomized inputs.

mod common;

use proptest::collection::vec;
use proptest::prelude::*;

use common::brute_force_violation_fraction;
use logitsep_core::data::BatchSampler;
use logitsep_core::losses::{loss_dispatch, LogitMatrix, LossConfig, LossKind};
use logitsep_core::pols::separation;
use logitsep_core::slc_eval::{auprc, pr_curve};
use logitsep_core::tensor::{logsumexp_slice, Tensor};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sampler_epoch_is_a_permutation(
        n in 1usize..200,
        batch in 1usize..40,
        seed in any::<u64>(),
    ) {
        let mut sampler = BatchSampler::new(n, batch, seed).unwrap();
        let mut seen = Vec::new();
        while seen.len() < n {
            seen.extend(sampler.next_batch());
        }
        prop_assert_eq!(seen.len(), n);
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn logsumexp_shift_invariance(
        xs in vec(-300.0f64..300.0, 1..12),
        c in -200.0f64..200.0,
    ) {
        let base = logsumexp_slice(&xs);
        let shifted: Vec<f64> = xs.iter().map(|&x| x + c).collect();
        let got = logsumexp_slice(&shifted);
        prop_assert!((got - (base + c)).abs() < 1e-10, "{} vs {}", got, base + c);
    }

    #[test]
    fn every_loss_is_non_negative(
        m in 1usize..5,
        k in 2usize..6,
        seed in any::<u64>(),
        kind_idx in 0usize..7,
    ) {
        let mut rng = logitsep_core::rng::Rng::new(seed);
        let z: Vec<f64> = (0..m * k).map(|_| rng.uniform(-6.0, 6.0)).collect();
        let y: Vec<usize> = (0..m).map(|_| rng.index(k)).collect();
        let lm = LogitMatrix::new(Tensor::from_vec(m, k, z).unwrap(), y).unwrap();
        let cfg = LossConfig::new(LossKind::ALL[kind_idx]);
        let v = loss_dispatch(&cfg, &lm).unwrap();
        prop_assert!(v.loss >= 0.0, "{} gave {}", cfg.kind.name(), v.loss);
    }

    #[test]
    fn auprc_is_invariant_under_monotone_transforms(
        scores in vec(-4.0f64..4.0, 3..60),
        flips in vec(any::<bool>(), 3..60),
        scale in 0.1f64..2.0,
    ) {
        let n = scores.len().min(flips.len());
        let scores = &scores[..n];
        let labels = &flips[..n];
        let pos = labels.iter().filter(|&&l| l).count();
        prop_assume!(pos > 0 && pos < n);
        let base = pr_curve(scores, labels, 0).unwrap();
        let transformed: Vec<f64> = scores.iter().map(|&s| (scale * s).exp()).collect();
        let t = pr_curve(&transformed, labels, 0).unwrap();
        prop_assert!((auprc(&base) - auprc(&t)).abs() < 1e-12);
    }

    #[test]
    fn separation_margin_sign_matches_pair_violations(
        m in 1usize..6,
        k in 2usize..6,
        seed in any::<u64>(),
    ) {
        let mut rng = logitsep_core::rng::Rng::new(seed);
        let z: Vec<f64> = (0..m * k).map(|_| rng.uniform(-3.0, 3.0)).collect();
        let y: Vec<usize> = (0..m).map(|_| rng.index(k)).collect();
        let lm = LogitMatrix::new(Tensor::from_vec(m, k, z).unwrap(), y).unwrap();
        let rep = separation(&lm).unwrap();
        prop_assert_eq!(rep.margin > 0.0, rep.violating_pair_fraction == 0.0);
        let brute = brute_force_violation_fraction(&lm);
        prop_assert!((rep.violating_pair_fraction - brute).abs() < 1e-15);
    }

    #[test]
    fn margin_shifts_by_minus_c_when_false_logits_shift_by_c(
        m in 1usize..5,
        k in 2usize..5,
        seed in any::<u64>(),
        c in -5.0f64..5.0,
    ) {
        let mut rng = logitsep_core::rng::Rng::new(seed);
        let z: Vec<f64> = (0..m * k).map(|_| rng.uniform(-3.0, 3.0)).collect();
        let y: Vec<usize> = (0..m).map(|_| rng.index(k)).collect();
        let lm = LogitMatrix::new(Tensor::from_vec(m, k, z.clone()).unwrap(), y.clone()).unwrap();
        let base = separation(&lm).unwrap().margin;

        let mut shifted = z;
        for i in 0..m {
            for j in 0..k {
                if j != y[i] {
                    shifted[i * k + j] += c;
                }
            }
        }
        let lm2 = LogitMatrix::new(Tensor::from_vec(m, k, shifted).unwrap(), y).unwrap();
        let got = separation(&lm2).unwrap().margin;
        prop_assert!((got - (base - c)).abs() < 1e-12, "{} vs {}", got, base - c);
    }
}
