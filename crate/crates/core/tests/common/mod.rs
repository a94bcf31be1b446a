//! Independent oracles shared by the integration tests. Nothing here calls
//! into the library's forward pass or metric code.
#![allow(dead_code)]

use headbias::data::{ClassSplit, Sample};
use headbias::model::{Architecture, Classifier};
use headbias::numerics::SeededRng;

/// Random small model: input dim in 1..=8, 0–2 hidden layers of width
/// 1..=6, 2..=5 classes, random nonzero biases everywhere.
pub fn random_model(rng: &mut SeededRng) -> Classifier {
    let input_dim = 1 + rng.below(8);
    let depth = rng.below(3);
    let hidden = (0..depth).map(|_| 1 + rng.below(6)).collect();
    let class_count = 2 + rng.below(4);
    let arch = Architecture {
        input_dim,
        hidden,
        class_count,
    };
    let mut m = Classifier::init(&arch, rng).unwrap();
    let params: Vec<f64> = m.flat_params().iter().map(|_| rng.uniform(-1.5, 1.5)).collect();
    m.set_flat_params(&params).unwrap();
    m
}

pub fn random_sample(rng: &mut SeededRng, dim: usize, class_count: usize) -> Sample {
    Sample {
        x: (0..dim).map(|_| rng.uniform(-2.0, 2.0)).collect(),
        y: rng.below(class_count),
    }
}

/// Logits computed directly from the public layer matrices.
pub fn logits(m: &Classifier, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for l in m.extractor.layers() {
        h = (0..l.weights.rows())
            .map(|r| {
                let z: f64 = (0..l.weights.cols()).map(|c| l.weights.get(r, c) * h[c]).sum();
                (z + l.bias[r]).tanh()
            })
            .collect();
    }
    let w = &m.head.weights;
    (0..w.rows())
        .map(|r| (0..w.cols()).map(|c| w.get(r, c) * h[c]).sum::<f64>() + m.head.bias[r])
        .collect()
}

pub fn cross_entropy(z: &[f64], y: usize) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    lse - z[y]
}

pub fn probabilities(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Mean cross-entropy over the batch plus, optionally, the hinge penalty
/// `λ Σ_{c∈V} max(0, b_min − b_c)²`.
pub fn batch_loss(m: &Classifier, batch: &[Sample], hinge: Option<(f64, f64, &ClassSplit)>) -> f64 {
    let ce = batch.iter().map(|s| cross_entropy(&logits(m, &s.x), s.y)).sum::<f64>() / batch.len() as f64;
    let penalty = hinge.map_or(0.0, |(b_min, lambda, split)| {
        lambda
            * split
                .forgotten()
                .iter()
                .map(|&c| (b_min - m.head.bias[c]).max(0.0).powi(2))
                .sum::<f64>()
    });
    ce + penalty
}

/// Central finite differences of `batch_loss` over every parameter.
pub fn finite_difference(m: &Classifier, batch: &[Sample], hinge: Option<(f64, f64, &ClassSplit)>, h: f64) -> Vec<f64> {
    let base = m.flat_params();
    let mut probe = m.clone();
    (0..base.len())
        .map(|i| {
            let mut p = base.clone();
            p[i] = base[i] + h;
            probe.set_flat_params(&p).unwrap();
            let up = batch_loss(&probe, batch, hinge);
            p[i] = base[i] - h;
            probe.set_flat_params(&p).unwrap();
            let down = batch_loss(&probe, batch, hinge);
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Brute-force bias metrics written straight from their definitions:
/// returns (BSC, MBG, MBS) in percent.
pub fn brute_force_metrics(bias: &[f64], v: &[usize]) -> (f64, f64, f64) {
    let mut fv = Vec::new();
    let mut rv = Vec::new();
    for (k, &b) in bias.iter().enumerate() {
        if v.contains(&k) {
            fv.push(b);
        } else {
            rv.push(b);
        }
    }
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let min_r = rv.iter().copied().fold(f64::INFINITY, f64::min);
    let min_v = fv.iter().copied().fold(f64::INFINITY, f64::min);
    let mut sorted = fv.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    };
    let logistic = |t: f64| 1.0 / (1.0 + (-t).exp());
    (
        100.0 / (1.0 + (mean(&fv) - mean(&rv)).abs()),
        100.0 * logistic(median - min_r),
        100.0 * logistic(min_v - min_r),
    )
}
