use std::f64::consts::PI;

use fracheat::density::{
    bound_samples, fit_bound, kde_at, quantile, rule_of_thumb_bandwidth, run_ensemble_with, BoundForm,
};
use fracheat::seed::auxiliary_rng;
use fracheat::{
    inverse_moment_estimate, kde, small_ball_diagnostic, verify_bound, BoundId, DriverPath, Error, ExperimentConfig,
    SolverConfig,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn small_config(n_paths: usize) -> ExperimentConfig {
    ExperimentConfig {
        n_paths,
        solver: SolverConfig {
            n_modes: 16,
            time_steps: 128,
            ..SolverConfig::default()
        },
        ..ExperimentConfig::default()
    }
}

fn ci_width(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    2.0 * 1.96 * (var / n).sqrt()
}

#[test]
fn kde_recovers_the_normal_law() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let samples: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect();
    let h = rule_of_thumb_bandwidth(&samples).unwrap();
    let est = kde(&samples, h).unwrap();
    let worst = est
        .points
        .iter()
        .zip(&est.density)
        .map(|(x, f)| (f - (-x * x / 2.0).exp() / (2.0 * PI).sqrt()).abs())
        .fold(0.0, f64::max);
    println!("max deviation from the normal density {worst:.4}");
    assert!(worst <= 0.02);
    assert!((est.integral() - 1.0).abs() < 0.01);
}

#[test]
fn ci_width_shrinks_like_root_n() {
    let small = run_ensemble_with(&small_config(200), &[]).unwrap();
    let large = run_ensemble_with(&small_config(400), &[]).unwrap();
    assert_eq!(small.samples().len(), 200 - small.failures.len());
    let ratio = ci_width(&large.samples()) / ci_width(&small.samples());
    println!("CI width ratio {ratio:.4}");
    assert!((ratio * 2f64.sqrt() - 1.0).abs() <= 0.2);
}

#[test]
fn malliavin_sup_norm_bounded_below_on_every_path() {
    let e = run_ensemble_with(&small_config(64), &[]).unwrap();
    let floor = e.c_u.unwrap() * e.config.lambda_0;
    assert!(e.failures.is_empty());
    assert!(e.paths.iter().all(|p| p.malliavin.sup_norm() >= floor - 1e-8));
    assert!(e.h_norms().iter().all(|h| *h > 0.0));
}

#[test]
fn small_ball_table_shape() {
    let e = run_ensemble_with(&small_config(64), &[]).unwrap();
    let mats: Vec<_> = e.paths.iter().map(|p| &p.malliavin).collect();
    let eps: Vec<f64> = (0..=40).map(|k| 10f64.powf(8.0 - k as f64 * 0.4)).collect();
    let rows = small_ball_diagnostic(&mats, &eps, 0.5, 0.5).unwrap();
    assert_eq!(rows[0].p_small_sup, 1.0);
    assert_eq!(rows.last().unwrap().p_small_sup, 0.0);
    assert!(rows.windows(2).all(|w| w[1].p_large_holder <= w[0].p_large_holder));
    assert!(small_ball_diagnostic(&mats, &eps, 0.5, 0.2).is_err());
    assert!(small_ball_diagnostic(&mats, &eps, 0.0, 0.5).is_err());
}

#[test]
fn flat_driver_polynomial_bound_is_trivially_covered() {
    let mut cfg = small_config(2);
    cfg.initial_amplitude = 0.7;
    let model = cfg.model().unwrap();
    let phi = cfg.initial_condition();
    let phi_norm = phi.sobolev_norm(2.0 + cfg.solver.gamma).unwrap();
    let x = DriverPath::zero(cfg.solver.time_steps, 1.0, cfg.n_components);
    let y = model.solve(&phi, &x).unwrap();
    let lin = model.linearize(&y).unwrap();
    let samples: Vec<_> = (0..20)
        .map(|_| bound_samples(&cfg, &model, &lin, &y, &x, phi_norm, 0.0, &[BoundId::Polynomial]).unwrap()[&BoundId::Polynomial])
        .collect();
    assert!(samples.iter().all(|s| s.lhs.is_finite() && s.lhs < 1e-10 * s.scale));
    let rep = fit_bound(BoundId::Polynomial, &samples, &mut auxiliary_rng(1, "test")).unwrap();
    assert_eq!(rep.form, BoundForm::Ratio);
    assert_eq!(rep.validate_coverage, 1.0);
}

#[test]
fn bounds_covered_on_a_small_fbm_ensemble() {
    let e = run_ensemble_with(&small_config(400), &BoundId::ALL).unwrap();
    for id in BoundId::ALL {
        let rep = verify_bound(id, &e).unwrap();
        println!("{id}: coverage {:.3}, max ratio {:.3}", rep.validate_coverage, rep.max_ratio);
        assert_eq!(rep.n_train + rep.n_validate, 400);
        assert!(rep.passes(0.95), "{id}");
    }
}

#[test]
fn ensemble_failures_are_reported() {
    let mut cfg = small_config(8);
    cfg.coefficient_amplitude = 1e308;
    match run_ensemble_with(&cfg, &[]) {
        Err(Error::EnsembleInvalid { failures, n_paths }) => assert!(failures > 0 && n_paths == 8),
        other => panic!("expected an invalid ensemble, got {:?}", other.map(|e| e.paths.len())),
    }
}

#[test]
fn inverse_moments_of_an_ensemble_are_finite() {
    let e = run_ensemble_with(&small_config(200), &[]).unwrap();
    for p in [1.0, 2.0, 4.0] {
        let r = inverse_moment_estimate(&e.h_norms(), p).unwrap();
        assert!(r.estimate.is_finite() && r.estimate > 0.0);
    }
    assert!(inverse_moment_estimate(&[1.0, 0.0], 1.0).is_err());
}

#[test]
fn kde_rejects_bad_bandwidths() {
    assert!(kde(&[0.0, 1.0], 0.0).is_err());
    assert!(kde(&[0.0, 1.0], -1.0).is_err());
    assert!(kde(&[0.0], 1.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn kde_integrates_to_one(samples in prop::collection::vec(-5.0f64..5.0, 2..300), h in 0.01f64..2.0) {
        let est = kde(&samples, h).unwrap();
        prop_assert!(est.density.iter().all(|f| *f >= 0.0));
        prop_assert!((est.integral() - 1.0).abs() <= 0.01);
        let q = quantile(&samples, 0.5);
        let at = kde_at(&samples, h, &[q]).unwrap();
        prop_assert!(at.density[0] > 0.0);
    }

    #[test]
    fn inverse_moment_of_equal_inputs(c in 1e-3f64..1e3, p in 0.0f64..6.0, n in 2usize..50) {
        let r = inverse_moment_estimate(&vec![c; n], p).unwrap();
        prop_assert_eq!(r.estimate, c.powf(-p));
        prop_assert!(r.stable);
    }
}
