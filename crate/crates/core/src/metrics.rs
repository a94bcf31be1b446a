//! Conventional unlearning metrics and bias-oriented diagnostics.
//!
//! With `b_V` / `b_R` the head biases of forgotten / retained classes:
//!
//! * BSC = 100 / (1 + |mean(b_V) − mean(b_R)|)
//! * MBG = 100 · σ(median(b_V) − min(b_R))
//! * MBS = 100 · σ(min(b_V) − min(b_R))
//!
//! The median of an even number of values is the mean of the two middle
//! ones. All three depend only on bias differences.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::{ClassSplit, Dataset};
use crate::error::{Error, Result};
use crate::model::Classifier;
use crate::numerics::sigmoid_unchecked;
use crate::unlearning::UnlearnOutcome;

/// MBS (percent) below which a zero-forget-accuracy model is flagged as
/// relying on bias suppression.
pub const SUSPECT_MBS_THRESHOLD: f64 = 25.0;

/// Percentage of samples whose predicted class equals the label.
pub fn accuracy(model: &Classifier, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidInput("accuracy of an empty dataset".into()));
    }
    let mut correct = 0usize;
    for s in data {
        if model.predict(&s.x)? == s.y {
            correct += 1;
        }
    }
    Ok(100.0 * correct as f64 / data.len() as f64)
}

/// Recovery time ratio, `100 · t_unlearn / t_retrain`.
pub fn rtr(t_unlearn: f64, t_retrain: f64) -> Result<f64> {
    if !(t_unlearn > 0.0 && t_unlearn.is_finite()) || !(t_retrain > 0.0 && t_retrain.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "times must be positive, got unlearn={t_unlearn}, retrain={t_retrain}"
        )));
    }
    Ok(100.0 * t_unlearn / t_retrain)
}

fn partition(bias: &[f64], split: &ClassSplit) -> Result<(Vec<f64>, Vec<f64>)> {
    if bias.len() != split.class_count() {
        return Err(Error::Shape(format!(
            "bias vector has {} entries but the split is over {} classes",
            bias.len(),
            split.class_count()
        )));
    }
    if let Some(i) = bias.iter().position(|b| !b.is_finite()) {
        return Err(Error::InvalidInput(format!("bias[{i}] is not finite")));
    }
    let v = split.forgotten().iter().map(|&c| bias[c]).collect();
    let r = split.retained().iter().map(|&c| bias[c]).collect();
    Ok((v, r))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn min(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::INFINITY, f64::min)
}

fn median(xs: &[f64]) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Bias stability coefficient, percent.
pub fn bsc(bias: &[f64], split: &ClassSplit) -> Result<f64> {
    let (v, r) = partition(bias, split)?;
    Ok(100.0 / (1.0 + (mean(&v) - mean(&r)).abs()))
}

/// Median bias gap, percent.
pub fn mbg(bias: &[f64], split: &ClassSplit) -> Result<f64> {
    let (v, r) = partition(bias, split)?;
    Ok(100.0 * sigmoid_unchecked(median(&v) - min(&r)))
}

/// Minimal bias score, percent.
pub fn mbs(bias: &[f64], split: &ClassSplit) -> Result<f64> {
    let (v, r) = partition(bias, split)?;
    Ok(100.0 * sigmoid_unchecked(min(&v) - min(&r)))
}

/// Guesses the forgotten labels as the `k` smallest biases (ties to the
/// lower index).
pub fn leakage_attack(bias: &[f64], k: usize) -> Result<BTreeSet<usize>> {
    if k == 0 || k >= bias.len() {
        return Err(Error::InvalidInput(format!(
            "attack size {k} must be in 1..{}",
            bias.len()
        )));
    }
    let mut idx: Vec<usize> = (0..bias.len()).collect();
    idx.sort_by(|&a, &b| bias[a].total_cmp(&bias[b]).then(a.cmp(&b)));
    Ok(idx.into_iter().take(k).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub bias_vector: Vec<f64>,
    pub forgotten: Vec<usize>,
    pub bsc: f64,
    pub mbg: f64,
    pub mbs: f64,
    pub leakage_prediction: Vec<usize>,
    pub leakage_exact_match: bool,
}

impl BiasReport {
    pub fn new(bias: &[f64], split: &ClassSplit) -> Result<Self> {
        let guess = leakage_attack(bias, split.forgotten().len())?;
        let exact = guess.iter().copied().eq(split.forgotten().iter().copied());
        Ok(Self {
            bias_vector: bias.to_vec(),
            forgotten: split.forgotten().to_vec(),
            bsc: bsc(bias, split)?,
            mbg: mbg(bias, split)?,
            mbs: mbs(bias, split)?,
            leakage_prediction: guess.into_iter().collect(),
            leakage_exact_match: exact,
        })
    }

    /// The forgotten-class biases are extreme outliers below the retained range.
    pub fn bias_signature(&self) -> bool {
        self.mbs < SUSPECT_MBS_THRESHOLD
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub retain_acc: f64,
    pub forget_acc: f64,
    /// `None` when timing was not measured (e.g. parallel runs).
    pub elapsed_seconds: Option<f64>,
    pub rtr: Option<f64>,
    pub bias: BiasReport,
    /// Zero forget accuracy achieved with an MBS below
    /// [`SUSPECT_MBS_THRESHOLD`].
    pub bias_dominated_suspected: bool,
}

/// All metrics for one model on held-out retain/forget data.
pub fn evaluate_model(
    model: &Classifier,
    elapsed_seconds: Option<f64>,
    retain_test: &Dataset,
    forget_test: &Dataset,
    split: &ClassSplit,
    t_retrain: Option<f64>,
) -> Result<EvalResult> {
    let retain_acc = accuracy(model, retain_test)?;
    let forget_acc = accuracy(model, forget_test)?;
    let bias = BiasReport::new(&model.head.bias, split)?;
    let rtr = match (elapsed_seconds, t_retrain) {
        (Some(t), Some(r)) if t > 0.0 => Some(rtr(t, r)?),
        _ => None,
    };
    Ok(EvalResult {
        retain_acc,
        forget_acc,
        elapsed_seconds,
        rtr,
        bias_dominated_suspected: forget_acc == 0.0 && bias.bias_signature(),
        bias,
    })
}

pub fn evaluate(
    outcome: &UnlearnOutcome,
    retain_test: &Dataset,
    forget_test: &Dataset,
    split: &ClassSplit,
    t_retrain: Option<f64>,
) -> Result<EvalResult> {
    evaluate_model(
        &outcome.model,
        Some(outcome.elapsed_seconds),
        retain_test,
        forget_test,
        split,
        t_retrain,
    )
}
