use nalgebra::DVector;
use pca_lab::adversarial::{build_linear_regime_instance, lowerbound_family, CounterexampleInstance};
use pca_lab::deflation::{black_box_pca, DeflationTrace};
use pca_lab::harness::{online_sigma, robust_sigma};
use pca_lab::linalg::{cond_k, random_psd};
use pca_lab::metrics::epca_error;
use pca_lab::online::{online_kcpca, StreamConfig};
use pca_lab::oracles::{ExactOracle, MatrixAccess};
use pca_lab::robust::{
    clip, corrupt, outlier_count, robust_kpca, sampler_hypercontractive, sampler_subgaussian, second_moment, CorruptStrategy,
    HypercontractiveStream, Weighting,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn clip_never_grows(v in prop::collection::vec(-50.0f64..50.0, 1..10), r in 0.01f64..100.0) {
        let x = DVector::from_vec(v);
        let y = clip(&x, r);
        prop_assert!(y.norm_squared() <= r.max(x.norm_squared()) * (1.0 + 1e-12));
        prop_assert!(y.norm_squared() <= x.norm_squared() * (1.0 + 1e-12));
        if x.norm_squared() <= r {
            prop_assert_eq!(y, x);
        }
    }

    #[test]
    fn corruption_replaces_exact_count(seed: u64, n in 10usize..200, eps in 0.0f64..0.49) {
        let sigma = robust_sigma(4, 1, seed).unwrap();
        let xs = sampler_subgaussian(&sigma, n, seed).unwrap();
        let s = corrupt(&xs, eps, &CorruptStrategy::Mirror { amplify: 3.0 }, seed).unwrap();
        let bad = s.inlier_mask.iter().filter(|m| !**m).count();
        prop_assert_eq!(bad, outlier_count(n, eps));
        for (i, keep) in s.inlier_mask.iter().enumerate() {
            if *keep {
                prop_assert_eq!(&s.points[i], &xs[i]);
            }
        }
    }

    #[test]
    fn removal_weights_sum(n in 1usize..300, eps in 0.0f64..1.0) {
        let order: Vec<usize> = (0..n).rev().collect();
        let w = Weighting::from_order(&order, eps);
        let total: f64 = w.dense(n).iter().sum();
        prop_assert!((total - (1.0 - eps) * n as f64).abs() < 1e-9);
        prop_assert!(w.dense(n).iter().all(|x| (0.0..=1.0).contains(x)));
    }

    #[test]
    fn trace_json_roundtrip(seed: u64, d in 1usize..10) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let m = random_psd(d, &mut r);
        let t = black_box_pca(&mut MatrixAccess::Explicit(&m), d, &mut ExactOracle).unwrap();
        prop_assert_eq!(DeflationTrace::from_json(&t.to_json()).unwrap(), t);
    }
}

#[test]
fn instance_json_roundtrip() {
    let inst = build_linear_regime_instance(1e-2, 11.0, 2.0, 1e-2).unwrap();
    assert_eq!(CounterexampleInstance::from_json(&inst.to_json()).unwrap(), inst);
    assert!(CounterexampleInstance::from_json("{}").is_err());
}

#[test]
fn robust_error_does_not_grow_with_k() {
    // Same samples, increasing k: the error stays within the same cap.
    let d = 16;
    let eps = 0.05;
    let n = 8000;
    for k in [1, 2, 4, 8] {
        let sigma = robust_sigma(d, k, 3).unwrap();
        let xs = sampler_subgaussian(&sigma, n, 4).unwrap();
        let s = corrupt(&xs, eps, &CorruptStrategy::Cluster { magnitude: (10.0 * sigma.trace()).sqrt(), spread: 0.1 }, 5).unwrap();
        let (u, _) = robust_kpca(&s.points, eps, eps * (1.0 / eps).ln(), k).unwrap();
        let e = epca_error(&sigma, &u).unwrap().epsilon_achieved;
        assert!(e <= 10.0 * eps * (1.0 / eps).ln(), "k = {k}: {e}");
    }
}

#[test]
fn clipped_samples_stay_hypercontractive() {
    // Clipping at the bias radius keeps the p = 4 moment ratio below 2 C_p.
    let sigma = robust_sigma(6, 2, 1).unwrap();
    let cp = 2.0;
    let cfg = pca_lab::robust::ClipConfig::for_bias(0.1, 4, cp, sigma.trace()).unwrap();
    let xs: Vec<_> = sampler_hypercontractive(4, cp, &sigma, 50_000, 2).unwrap().iter().map(|x| clip(x, cfg.r)).collect();
    let mut r = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let u = pca_lab::linalg::random_unit_vector(6, &mut r);
        let m2 = xs.iter().map(|x| x.dot(&u).powi(2)).sum::<f64>() / xs.len() as f64;
        let m4 = xs.iter().map(|x| x.dot(&u).powi(4)).sum::<f64>() / xs.len() as f64;
        assert!(m4.powf(0.25) <= 2.0 * cp * m2.sqrt());
    }
}

#[test]
fn lowerbound_covariances_match_samples() {
    let f = lowerbound_family(8, 4, 3.0, 0.01).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(11);
    for i in [0, 3] {
        let xs = f.sample(i, 40_000, &mut r).unwrap();
        let emp = second_moment(&xs).unwrap();
        let c = f.covariance(i).unwrap();
        let gap = pca_lab::linalg::op_norm(&(emp.matrix() - c.matrix()));
        assert!(gap < 0.1 * c.op_norm(), "index {i}: {gap}");
    }
}

#[test]
fn online_run_consumes_whole_stream() {
    let (d, k, n) = (8, 2, 6000);
    let sigma = online_sigma(d, k, 2).unwrap();
    let cfg = StreamConfig::new(n, d, k, 0.05, 0.5, cond_k(&sigma, k).unwrap());
    let mut s = HypercontractiveStream::new(cfg.p, cfg.cp, &sigma, n, 3).unwrap();
    let run = online_kcpca(&mut s, &cfg).unwrap();
    assert_eq!(run.frame.cols(), k);
    let used: usize = run.trace.steps.iter().map(|s| s.diagnostics.samples).sum();
    assert_eq!(used, k * run.segment_len);
    assert!(used + cfg.trace_samples() <= n);
}
