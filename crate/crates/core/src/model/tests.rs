use super::*;
use crate::numerics::softmax;

fn identity_model(bias: Vec<f64>) -> Classifier {
    let c = bias.len();
    Classifier::new(
        FeatureExtractor::identity(c),
        ClassificationHead::new(Matrix::identity(c), bias).unwrap(),
    )
    .unwrap()
}

fn small_model(seed: u64) -> Classifier {
    let arch = Architecture {
        input_dim: 4,
        hidden: vec![5, 3],
        class_count: 4,
    };
    let mut m = Classifier::init(&arch, &mut SeededRng::new(seed)).unwrap();
    m.head.bias = vec![0.3, -0.2, 0.1, -0.4];
    m
}

fn sample(x: Vec<f64>, y: usize) -> Sample {
    Sample { x, y }
}

#[test]
fn forward_examples() {
    let m = identity_model(vec![0.0, 0.0]);
    assert_eq!(m.forward(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    let m = identity_model(vec![10.0, -10.0]);
    assert_eq!(m.forward(&[1.0, 2.0]).unwrap(), vec![11.0, -8.0]);
    assert!(matches!(m.forward(&[1.0]), Err(Error::Shape(_))));
}

#[test]
fn forward_is_deterministic() {
    let m = small_model(3);
    let x = [0.3, -1.2, 0.7, 2.0];
    let a: Vec<u64> = m.forward(&x).unwrap().iter().map(|v| v.to_bits()).collect();
    let b: Vec<u64> = m.forward(&x).unwrap().iter().map(|v| v.to_bits()).collect();
    assert_eq!(a, b);
}

#[test]
fn init_follows_fan_in_bounds() {
    let arch = Architecture {
        input_dim: 16,
        hidden: vec![32, 32],
        class_count: 10,
    };
    let m = Classifier::init(&arch, &mut SeededRng::new(0)).unwrap();
    for l in m.extractor.layers() {
        let bound = 1.0 / (l.weights.cols() as f64).sqrt();
        assert!(l.weights.as_slice().iter().all(|w| w.abs() <= bound));
        assert!(l.bias.iter().all(|&b| b == 0.0));
    }
    assert!(m.head.bias.iter().all(|&b| b == 0.0));
    assert_eq!(m.architecture(), arch);
}

#[test]
fn predict_examples() {
    assert_eq!(predict(&[0.1, 0.9, 0.3]).unwrap(), 1);
    assert_eq!(predict(&[0.5, 0.5]).unwrap(), 0);
    assert!(predict(&[]).is_err());
}

#[test]
fn large_logit_shift_removes_class_from_argmax() {
    let mut rng = SeededRng::new(5);
    for _ in 0..500 {
        let n = 2 + rng.below(8);
        let logits: Vec<f64> = (0..n).map(|_| rng.uniform(-10.0, 10.0)).collect();
        let c = rng.below(n);
        let mut shifted = logits.clone();
        shifted[c] -= 1e3;
        assert_ne!(predict(&shifted).unwrap(), c);
    }
}

#[test]
fn ce_loss_examples() {
    assert!((ce_loss(&[0.0, 0.0], 0).unwrap() - 2f64.ln()).abs() < 1e-15);
    assert!(ce_loss(&[1000.0, 0.0], 0).unwrap() < 1e-300);
    assert!((ce_loss(&[0.0; 4], 3).unwrap() - 4f64.ln()).abs() < 1e-15);
    assert!(ce_loss(&[0.0; 4], 4).is_err());
}

#[test]
fn bias_gradient_examples() {
    assert_eq!(bias_gradient(&[0.5, 0.5], 0).unwrap(), vec![-0.5, 0.5]);
    let g = bias_gradient(&[0.9, 0.05, 0.05], 0).unwrap();
    let expected = [-0.1, 0.05, 0.05];
    for (a, b) in g.iter().zip(expected) {
        assert!((a - b).abs() < 1e-15);
    }
    assert!(g.iter().sum::<f64>().abs() < 1e-15);
    assert!(bias_gradient(&[0.5, 0.4], 0).is_err());
    assert!(bias_gradient(&[0.5, 0.5], 2).is_err());
}

#[test]
fn standard_backward_bias_matches_bias_gradient() {
    let m = small_model(1);
    let s = sample(vec![0.5, -0.5, 1.0, 0.2], 2);
    let g = m.backward(&[&s], GradientMode::Standard).unwrap();
    let expected = bias_gradient(&softmax(&m.forward(&s.x).unwrap()).unwrap(), 2).unwrap();
    for (a, b) in g.head.bias.iter().zip(&expected) {
        assert!((a - b).abs() < 1e-15);
    }
    assert!((g.loss - ce_loss(&m.forward(&s.x).unwrap(), 2).unwrap()).abs() < 1e-12);
}

#[test]
fn bias_reversal_flips_only_forgotten_bias_entries() {
    let m = small_model(2);
    let s = sample(vec![0.1, 0.2, -0.3, 0.4], 1);
    let split = ClassSplit::new(4, [1]).unwrap();
    let std = m.backward(&[&s], GradientMode::Standard).unwrap();
    let rev = m.backward(&[&s], GradientMode::BiasReversal(&split)).unwrap();
    let p = softmax(&m.forward(&s.x).unwrap()).unwrap();

    assert!((rev.head.bias[1] - (1.0 - p[1])).abs() < 1e-15);
    assert!(rev.head.bias[1] > 0.0);
    for k in [0, 2, 3] {
        assert_eq!(rev.head.bias[k].to_bits(), std.head.bias[k].to_bits());
    }
    assert_eq!(rev.head.weights, std.head.weights);
    assert_eq!(rev.extractor, std.extractor);
}

#[test]
fn hinge_contribution_examples() {
    let split = ClassSplit::new(2, [1]).unwrap();
    let s = sample(vec![0.0, 0.0], 0);
    let mode = GradientMode::HingeBound {
        b_min: -1.0,
        lambda: 0.5,
        forgotten: &split,
    };

    let m = identity_model(vec![0.0, -2.0]);
    let std = m.backward(&[&s], GradientMode::Standard).unwrap();
    let hinge = m.backward(&[&s], mode).unwrap();
    // −2·0.5·(−1 − (−2)) = −1
    assert!((hinge.head.bias[1] - std.head.bias[1] - (-1.0)).abs() < 1e-15);
    assert!((hinge.loss - std.loss - 0.5).abs() < 1e-15);
    assert_eq!(hinge.head.bias[0], std.head.bias[0]);

    let m = identity_model(vec![0.0, -0.5]);
    let std = m.backward(&[&s], GradientMode::Standard).unwrap();
    let hinge = m.backward(&[&s], mode).unwrap();
    assert_eq!(hinge, std);
}

#[test]
fn frozen_extractor_gets_zero_gradient_and_no_update() {
    let mut m = small_model(4);
    m.extractor.frozen = true;
    let before = m.extractor.clone();
    let s = sample(vec![1.0, 0.0, -1.0, 0.5], 3);
    for _ in 0..20 {
        let g = m.backward(&[&s], GradientMode::Standard).unwrap();
        assert!(g
            .extractor
            .iter()
            .all(|l| l.weights.as_slice().iter().chain(&l.bias).all(|&v| v == 0.0)));
        m.sgd_step(&g, 0.5).unwrap();
    }
    assert_eq!(m.extractor, before);
}

#[test]
fn sgd_step_bias_directions() {
    let mut m = small_model(6);
    let batch = [
        sample(vec![0.2, 0.1, 0.0, -0.3], 0),
        sample(vec![-0.4, 0.9, 0.3, 0.1], 1),
    ];
    let refs: Vec<&Sample> = batch.iter().collect();
    let before = m.head.bias.clone();
    let g = m.backward(&refs, GradientMode::Standard).unwrap();
    m.sgd_step(&g, 0.1).unwrap();
    // Classes 2 and 3 never appear as ground truth: strictly decreasing.
    assert!(m.head.bias[2] < before[2]);
    assert!(m.head.bias[3] < before[3]);

    // Single-sample: ground-truth bias strictly increases.
    let mut m = small_model(6);
    let b0 = m.head.bias[0];
    let g = m.backward(&[&batch[0]], GradientMode::Standard).unwrap();
    m.sgd_step(&g, 0.1).unwrap();
    assert!(m.head.bias[0] > b0);
}

#[test]
fn reversed_destroy_step_matches_hand_value() {
    // p_y = 0.8 for y = 0: logits [ln 0.8, ln 0.1, ln 0.1]
    let mut m = identity_model(vec![0.8f64.ln(), 0.1f64.ln(), 0.1f64.ln()]);
    let split = ClassSplit::new(3, [0]).unwrap();
    let s = sample(vec![0.0; 3], 0);
    let g = m.backward(&[&s], GradientMode::BiasReversal(&split)).unwrap();
    let before = m.head.bias.clone();
    m.sgd_step(&g, 0.1).unwrap();
    assert!(((m.head.bias[0] - before[0]) - (-0.02)).abs() < 1e-12);
    assert!(((m.head.bias[1] - before[1]) - (-0.01)).abs() < 1e-12);
}

#[test]
fn sgd_step_rejects_bad_inputs() {
    let mut m = small_model(7);
    let s = sample(vec![0.0; 4], 0);
    let mut g = m.backward(&[&s], GradientMode::Standard).unwrap();
    assert!(m.sgd_step(&g, 0.0).is_err());
    g.head.bias[0] = f64::NAN;
    let before = m.clone();
    assert!(matches!(m.sgd_step(&g, 0.1), Err(Error::Numeric(_))));
    assert_eq!(m, before);
}

#[test]
fn backward_rejects_bad_batches() {
    let m = small_model(8);
    assert!(matches!(
        m.backward(&[], GradientMode::Standard),
        Err(Error::InvalidInput(_))
    ));
    let short = sample(vec![0.0; 3], 0);
    assert!(matches!(
        m.backward(&[&short], GradientMode::Standard),
        Err(Error::Shape(_))
    ));
    let bad_label = sample(vec![0.0; 4], 9);
    assert!(m.backward(&[&bad_label], GradientMode::Standard).is_err());
}

#[test]
fn flat_params_round_trip() {
    let m = small_model(9);
    let mut other = small_model(10);
    other.set_flat_params(&m.flat_params()).unwrap();
    assert_eq!(other, m);
    assert!(other.set_flat_params(&[0.0]).is_err());
    let g = m.backward(&[&sample(vec![0.0; 4], 1)], GradientMode::Standard).unwrap();
    assert_eq!(g.flatten().len(), m.param_count());
}

#[test]
fn sgd_step_rejects_overflowing_update() {
    let mut m = small_model(12);
    let s = sample(vec![1.0, 1.0, 1.0, 1.0], 0);
    let mut g = m.backward(&[&s], GradientMode::Standard).unwrap();
    g.head.bias[3] = 1e308;
    let before = m.clone();
    assert!(matches!(m.sgd_step(&g, 10.0), Err(Error::Numeric(_))));
    assert_eq!(m, before);
}
