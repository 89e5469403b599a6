mod common;

use boom_core::policy::{AlignMetric, AlignmentConfig, WeightMode};
use common::*;

const TOL: f64 = 1e-4;

#[test]
fn network_gradients_match_finite_differences() {
    for (name, spec) in network_specs() {
        for seed in 0..5 {
            let e = network_grad_error(&spec, seed);
            assert!(e <= TOL, "{name} seed {seed}: rel err {e:e}");
        }
    }
}

#[test]
fn model_loss_gradient_matches_finite_differences() {
    for seed in 0..3 {
        let e = model_loss_grad_error(seed);
        assert!(e <= TOL, "seed {seed}: rel err {e:e}");
    }
}

#[test]
fn policy_loss_gradient_matches_finite_differences() {
    for metric in [AlignMetric::ForwardKL, AlignMetric::ReverseKLSurrogate] {
        for mode in [WeightMode::SoftQ, WeightMode::Uniform] {
            let mut cfg = AlignmentConfig::new(2);
            cfg.metric = metric;
            cfg.weight_mode = mode;
            cfg.entropy_coeff = 0.05;
            for seed in 0..3 {
                let e = policy_loss_grad_error(seed, &cfg);
                assert!(e <= TOL, "{metric:?}/{mode:?} seed {seed}: rel err {e:e}");
            }
        }
    }
}

#[test]
fn relative_error_floor() {
    assert_eq!(rel_err(1.0, 1.0), 0.0);
    assert!((rel_err(2.0, 1.0) - 0.5).abs() < 1e-15);
    assert!((rel_err(0.0, 1e-6) - 1e-3).abs() < 1e-15);
}
