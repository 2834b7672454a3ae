mod common;

use common::{design, gradient_check, samples};
use tdgp_core::delay::{huber_grad, huber_loss};
use tdgp_core::{DelayModelWeights, LinearBaseline, ModelConfig};

#[test]
fn analytic_gradient_matches_central_differences() {
    for seed in 0..10 {
        let err = gradient_check(seed, 30);
        assert!(err < 1e-4, "batch {seed}: relative error {err:e}");
    }
}

#[test]
fn huber_is_continuous_with_bounded_slope() {
    for delta in [0.01f64, 0.05, 1.0, 4.0] {
        let at = 0.5 * delta * delta;
        let below = f64::from_bits(delta.to_bits() - 1);
        let above = f64::from_bits(delta.to_bits() + 1);
        for e in [below, delta, above] {
            assert!((huber_loss(0.0, e, delta) - at).abs() <= 1e-12);
            assert!((huber_loss(e, 0.0, delta) - at).abs() <= 1e-12);
        }
        let n = 100_000;
        for i in 0..n {
            let e = -20.0 * delta + 40.0 * delta * i as f64 / (n - 1) as f64;
            assert!(huber_grad(e, 0.0, delta).abs() <= delta);
        }
    }
}

#[test]
fn batched_inference_equals_per_net() {
    let d = design(1500, 21);
    let all = samples(&d, 21);
    assert!(all.len() >= 500, "{} nets", all.len());
    let mut w = DelayModelWeights::init(&ModelConfig::default(), 21);
    w.fit_normalization(all.iter().map(|s| &s.features));
    let refs: Vec<_> = all.iter().map(|s| &s.features).collect();
    let sequential: Vec<Vec<f64>> = refs.iter().map(|f| w.predict_net(f).unwrap()).collect();
    for batch in [1, 7, 256, 4096] {
        let (pred, stats) = w.predict_batched(&refs, batch);
        assert_eq!(stats.nets_encoded, refs.len(), "batch {batch}");
        assert_eq!(stats.pairs, all.iter().map(|s| s.pairs()).sum::<usize>());
        for (a, b) in pred.iter().flatten().zip(sequential.iter().flatten()) {
            assert!((a - b).abs() <= 1e-6, "batch {batch}: {a} vs {b}");
        }
    }
}

#[test]
fn baseline_is_the_least_squares_solution() {
    let d = design(800, 5);
    let all = samples(&d, 5);
    let fit = LinearBaseline::fit(&all, 0.01).unwrap();
    assert_eq!(fit, LinearBaseline::fit(&all, 0.01).unwrap());
    // Normal equations: the residual is orthogonal to every regressor.
    let mut dot = [0.0f64; 5];
    let mut scale = [0.0f64; 5];
    for s in &all {
        for (p, &y) in s.features.pins.iter().zip(&s.labels) {
            let x = LinearBaseline::regressors(&s.features.env, p);
            let res = y - fit.predict_raw(&s.features.env, p);
            for j in 0..5 {
                dot[j] += x[j] * res;
                scale[j] += (x[j] * y).abs();
            }
        }
    }
    for j in 0..5 {
        assert!(dot[j].abs() <= 1e-8 * scale[j], "regressor {j}: {}", dot[j]);
    }
}
