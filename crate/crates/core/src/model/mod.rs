//! Small MLP classifier with a linear classification head, trained with
//! hand-derived softmax cross-entropy gradients.
//!
//! Logits are `z_k = w_k · φ(x) + b_k`, where `φ` is a stack of
//! `tanh(W x + b)` layers (possibly empty, in which case `φ(x) = x`) and
//! `(w_k, b_k)` are the rows of the [`ClassificationHead`].
//!
//! Gradients are means over the batch. [`GradientMode`] selects how head
//! bias gradients of forgotten classes are treated:
//!
//! * `Standard`: plain cross-entropy.
//! * `BiasReversal`: the head bias gradient of every forgotten class is
//!   negated; every other entry is left alone.
//! * `HingeBound`: the loss gains `λ Σ_{c∈V} max(0, b_min − b_c)²`, added once
//!   per batch, contributing `−2λ (b_min − b_c)` to `∂/∂b_c` when
//!   `b_c < b_min`.

mod checkpoint;

pub use checkpoint::{read_head, Checkpoint, CheckpointHead, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use serde::{Deserialize, Serialize};

use crate::data::{ClassSplit, Sample};
use crate::error::{Error, Result};
use crate::numerics::{self, Matrix, SeededRng};

/// Layer sizes of a [`Classifier`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    /// Widths of the tanh layers of the feature extractor, in order. The last
    /// one is the feature dimension `d`; when empty, `d = input_dim`.
    pub hidden: Vec<usize>,
    pub class_count: usize,
}

impl Architecture {
    pub fn feature_dim(&self) -> usize {
        self.hidden.last().copied().unwrap_or(self.input_dim)
    }
}

/// One affine map; `weights` is `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros_like(&self) -> Self {
        Self {
            weights: Matrix::zeros(self.weights.rows(), self.weights.cols()),
            bias: vec![0.0; self.bias.len()],
        }
    }

    /// Uniform `±1/√fan_in` weights, zero biases.
    fn init(inputs: usize, outputs: usize, rng: &mut SeededRng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let mut weights = Matrix::zeros(outputs, inputs);
        for w in weights.as_mut_slice() {
            *w = rng.uniform(-bound, bound);
        }
        Self {
            weights,
            bias: vec![0.0; outputs],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureExtractor {
    input_dim: usize,
    layers: Vec<Layer>,
    pub frozen: bool,
}

impl FeatureExtractor {
    pub fn new(input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Shape("extractor input dimension must be positive".into()));
        }
        let mut width = input_dim;
        for (i, l) in layers.iter().enumerate() {
            if l.weights.cols() != width || l.bias.len() != l.weights.rows() {
                return Err(Error::Shape(format!(
                    "layer {i} is {}x{} with bias {}, expected input width {width}",
                    l.weights.rows(),
                    l.weights.cols(),
                    l.bias.len()
                )));
            }
            width = l.weights.rows();
        }
        Ok(Self {
            input_dim,
            layers,
            frozen: false,
        })
    }

    /// `φ(x) = x`.
    pub fn identity(dim: usize) -> Self {
        Self {
            input_dim: dim,
            layers: Vec::new(),
            frozen: false,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, |l| l.weights.rows())
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Activations of every layer, starting with the input itself.
    fn trace(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for l in &self.layers {
            let prev = acts.last().expect("non-empty");
            let mut h = l.weights.matvec(prev);
            for (v, b) in h.iter_mut().zip(&l.bias) {
                *v = (*v + b).tanh();
            }
            acts.push(h);
        }
        acts
    }

    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::Shape(format!(
                "input has length {} but the extractor expects {}",
                x.len(),
                self.input_dim
            )));
        }
        Ok(self.trace(x).pop().expect("non-empty"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationHead {
    /// `C × d`; row `k` is `w_k`.
    pub weights: Matrix,
    /// Length `C`.
    pub bias: Vec<f64>,
}

impl ClassificationHead {
    pub fn new(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        if weights.rows() != bias.len() {
            return Err(Error::Shape(format!(
                "head has {} weight rows but {} biases",
                weights.rows(),
                bias.len()
            )));
        }
        Ok(Self { weights, bias })
    }

    pub fn class_count(&self) -> usize {
        self.bias.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.cols()
    }

    fn zeros_like(&self) -> Self {
        Self {
            weights: Matrix::zeros(self.weights.rows(), self.weights.cols()),
            bias: vec![0.0; self.bias.len()],
        }
    }
}

/// How [`Classifier::backward`] treats forgotten-class head biases.
#[derive(Debug, Clone, Copy)]
pub enum GradientMode<'a> {
    Standard,
    BiasReversal(&'a ClassSplit),
    HingeBound {
        b_min: f64,
        lambda: f64,
        forgotten: &'a ClassSplit,
    },
}

/// Mean-over-batch gradients, shaped like the [`Classifier`] they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub extractor: Vec<Layer>,
    pub head: ClassificationHead,
    pub loss: f64,
}

impl Gradients {
    /// Same ordering as [`Classifier::flat_params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.extractor {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out.extend_from_slice(self.head.weights.as_slice());
        out.extend_from_slice(&self.head.bias);
        out
    }

    fn slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.extractor
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .chain([self.head.weights.as_mut_slice(), self.head.bias.as_mut_slice()])
    }

    fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.extractor
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .chain([self.head.weights.as_slice(), self.head.bias.as_slice()])
    }

    pub fn is_finite(&self) -> bool {
        self.loss.is_finite() && self.slices().all(|s| s.iter().all(|v| v.is_finite()))
    }

    /// `a · self + b · other`, loss combined the same way. Shapes must match.
    pub fn combine(&self, a: f64, other: &Gradients, b: f64) -> Result<Gradients> {
        if self.extractor.len() != other.extractor.len()
            || self.head.weights.rows() != other.head.weights.rows()
            || self.head.weights.cols() != other.head.weights.cols()
        {
            return Err(Error::Shape("cannot combine gradients of different models".into()));
        }
        let mut out = self.clone();
        for (dst, src) in out.slices_mut().zip(other.slices()) {
            if dst.len() != src.len() {
                return Err(Error::Shape("cannot combine gradients of different models".into()));
            }
            for (d, s) in dst.iter_mut().zip(src) {
                *d = a * *d + b * s;
            }
        }
        out.loss = a * self.loss + b * other.loss;
        Ok(out)
    }
}

/// Feature extractor followed by a linear classification head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub extractor: FeatureExtractor,
    pub head: ClassificationHead,
}

impl Classifier {
    pub fn new(extractor: FeatureExtractor, head: ClassificationHead) -> Result<Self> {
        if extractor.output_dim() != head.feature_dim() {
            return Err(Error::Shape(format!(
                "extractor produces {} features but the head expects {}",
                extractor.output_dim(),
                head.feature_dim()
            )));
        }
        if head.class_count() == 0 {
            return Err(Error::Shape("head has no classes".into()));
        }
        Ok(Self { extractor, head })
    }

    /// Fresh model: weights uniform in `±1/√fan_in`, all biases zero.
    pub fn init(arch: &Architecture, rng: &mut SeededRng) -> Result<Self> {
        if arch.input_dim == 0 || arch.class_count == 0 || arch.hidden.contains(&0) {
            return Err(Error::Config(format!("degenerate architecture {arch:?}")));
        }
        let mut layers = Vec::with_capacity(arch.hidden.len());
        let mut width = arch.input_dim;
        for &h in &arch.hidden {
            layers.push(Layer::init(width, h, rng));
            width = h;
        }
        let head_layer = Layer::init(width, arch.class_count, rng);
        Self::new(
            FeatureExtractor::new(arch.input_dim, layers)?,
            ClassificationHead::new(head_layer.weights, head_layer.bias)?,
        )
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            input_dim: self.extractor.input_dim(),
            hidden: self.extractor.layers.iter().map(|l| l.weights.rows()).collect(),
            class_count: self.class_count(),
        }
    }

    pub fn class_count(&self) -> usize {
        self.head.class_count()
    }

    pub fn input_dim(&self) -> usize {
        self.extractor.input_dim()
    }

    /// Logits `z_k = w_k · φ(x) + b_k`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let phi = self.extractor.features(x)?;
        numerics::affine(&self.head.weights, &phi, &self.head.bias)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        predict(&self.forward(x)?)
    }

    /// Every parameter in a fixed order: extractor layers (weights row-major,
    /// then bias), then head weights, then head bias.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.extractor.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out.extend_from_slice(self.head.weights.as_slice());
        out.extend_from_slice(&self.head.bias);
        out
    }

    pub fn param_count(&self) -> usize {
        self.extractor
            .layers
            .iter()
            .map(|l| l.weights.as_slice().len() + l.bias.len())
            .sum::<usize>()
            + self.head.weights.as_slice().len()
            + self.head.bias.len()
    }

    /// Inverse of [`Classifier::flat_params`].
    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut rest = params;
        let mut take = |dst: &mut [f64]| {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        };
        for l in &mut self.extractor.layers {
            take(l.weights.as_mut_slice());
            take(&mut l.bias);
        }
        take(self.head.weights.as_mut_slice());
        take(&mut self.head.bias);
        Ok(())
    }

    fn zero_gradients(&self) -> Gradients {
        Gradients {
            extractor: self.extractor.layers.iter().map(Layer::zeros_like).collect(),
            head: self.head.zeros_like(),
            loss: 0.0,
        }
    }

    fn check_sample(&self, s: &Sample) -> Result<()> {
        if s.x.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "sample has length {} but the model expects {}",
                s.x.len(),
                self.input_dim()
            )));
        }
        if s.y >= self.class_count() {
            return Err(Error::InvalidInput(format!(
                "label {} out of range for {} classes",
                s.y,
                self.class_count()
            )));
        }
        Ok(())
    }

    fn check_split(&self, split: &ClassSplit) -> Result<()> {
        if split.class_count() != self.class_count() {
            return Err(Error::Shape(format!(
                "split is over {} classes but the model has {}",
                split.class_count(),
                self.class_count()
            )));
        }
        Ok(())
    }

    /// Mean gradients of the batch loss under `mode`. A frozen extractor gets
    /// exactly-zero gradients.
    pub fn backward(&self, batch: &[&Sample], mode: GradientMode<'_>) -> Result<Gradients> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        match mode {
            GradientMode::Standard => {}
            GradientMode::BiasReversal(split) => self.check_split(split)?,
            GradientMode::HingeBound {
                b_min,
                lambda,
                forgotten,
            } => {
                self.check_split(forgotten)?;
                if !(lambda >= 0.0 && lambda.is_finite()) || !b_min.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "hinge needs finite b_min and lambda >= 0, got b_min={b_min}, lambda={lambda}"
                    )));
                }
            }
        }

        let mut g = self.zero_gradients();
        for s in batch {
            self.check_sample(s)?;
            let acts = self.extractor.trace(&s.x);
            let phi = acts.last().expect("non-empty");
            let mut logits = self.head.weights.matvec(phi);
            for (z, b) in logits.iter_mut().zip(&self.head.bias) {
                *z += b;
            }
            g.loss += numerics::log_sum_exp_unchecked(&logits) - logits[s.y];

            // ∂L/∂z_k = p_k − [k = y]
            let mut dz = numerics::softmax_unchecked(&logits);
            dz[s.y] -= 1.0;

            g.head.weights.add_outer(1.0, &dz, phi);
            for (gb, d) in g.head.bias.iter_mut().zip(&dz) {
                *gb += d;
            }

            if self.extractor.frozen || self.extractor.layers.is_empty() {
                continue;
            }
            let mut upstream = self.head.weights.transpose_matvec(&dz);
            for (i, layer) in self.extractor.layers.iter().enumerate().rev() {
                let h = &acts[i + 1];
                let pre: Vec<f64> = upstream.iter().zip(h).map(|(u, hv)| u * (1.0 - hv * hv)).collect();
                let lg = &mut g.extractor[i];
                lg.weights.add_outer(1.0, &pre, &acts[i]);
                for (gb, p) in lg.bias.iter_mut().zip(&pre) {
                    *gb += p;
                }
                if i > 0 {
                    upstream = layer.weights.transpose_matvec(&pre);
                }
            }
        }

        let n = batch.len() as f64;
        for s in g.slices_mut() {
            for v in s {
                *v /= n;
            }
        }
        g.loss /= n;

        match mode {
            GradientMode::Standard => {}
            GradientMode::BiasReversal(split) => {
                for &c in split.forgotten() {
                    g.head.bias[c] = -g.head.bias[c];
                }
            }
            GradientMode::HingeBound {
                b_min,
                lambda,
                forgotten,
            } => {
                for &c in forgotten.forgotten() {
                    let gap = b_min - self.head.bias[c];
                    if gap > 0.0 {
                        g.loss += lambda * gap * gap;
                        g.head.bias[c] += -2.0 * lambda * gap;
                    }
                }
            }
        }
        Ok(g)
    }

    /// `θ ← θ − η g` for every trainable parameter. A frozen extractor is
    /// left untouched. Nothing is modified if the step is rejected.
    pub fn sgd_step(&mut self, grads: &Gradients, eta: f64) -> Result<()> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "learning rate must be positive, got {eta}"
            )));
        }
        let shapes_match = grads.extractor.len() == self.extractor.layers.len()
            && grads
                .extractor
                .iter()
                .zip(&self.extractor.layers)
                .all(|(g, l)| g.weights.rows() == l.weights.rows() && g.weights.cols() == l.weights.cols())
            && grads.head.weights.rows() == self.head.weights.rows()
            && grads.head.weights.cols() == self.head.weights.cols();
        if !shapes_match {
            return Err(Error::Shape("gradient shapes do not match the model".into()));
        }
        if !grads.is_finite() {
            return Err(Error::Numeric("non-finite gradient, step aborted".into()));
        }
        let overflows = |p: &[f64], g: &[f64]| p.iter().zip(g).any(|(pv, gv)| !(pv - eta * gv).is_finite());
        let extractor_overflows = !self.extractor.frozen
            && self
                .extractor
                .layers
                .iter()
                .zip(&grads.extractor)
                .any(|(l, g)| overflows(l.weights.as_slice(), g.weights.as_slice()) || overflows(&l.bias, &g.bias));
        if extractor_overflows
            || overflows(self.head.weights.as_slice(), grads.head.weights.as_slice())
            || overflows(&self.head.bias, &grads.head.bias)
        {
            return Err(Error::Numeric("step would make parameters non-finite".into()));
        }
        let apply = |p: &mut [f64], g: &[f64]| {
            for (pv, gv) in p.iter_mut().zip(g) {
                *pv -= eta * gv;
            }
        };
        if !self.extractor.frozen {
            for (l, g) in self.extractor.layers.iter_mut().zip(&grads.extractor) {
                apply(l.weights.as_mut_slice(), g.weights.as_slice());
                apply(&mut l.bias, &g.bias);
            }
        }
        apply(self.head.weights.as_mut_slice(), grads.head.weights.as_slice());
        apply(&mut self.head.bias, &grads.head.bias);
        Ok(())
    }
}

/// Index of the largest logit; ties go to the lowest index.
pub fn predict(logits: &[f64]) -> Result<usize> {
    if logits.is_empty() {
        return Err(Error::InvalidInput("cannot predict from empty logits".into()));
    }
    let mut best = 0;
    for (i, &z) in logits.iter().enumerate().skip(1) {
        if z > logits[best] {
            best = i;
        }
    }
    Ok(best)
}

/// `−log softmax(logits)[y]`, via log-sum-exp.
pub fn ce_loss(logits: &[f64], y: usize) -> Result<f64> {
    if y >= logits.len() {
        return Err(Error::InvalidInput(format!(
            "label {y} out of range for {} logits",
            logits.len()
        )));
    }
    let lse = numerics::log_sum_exp(logits)?;
    Ok((lse - logits[y]).max(0.0))
}

/// `∂L/∂b_k = p_k − [k = y]` for one sample.
pub fn bias_gradient(probs: &[f64], y: usize) -> Result<Vec<f64>> {
    if y >= probs.len() {
        return Err(Error::InvalidInput(format!(
            "label {y} out of range for {} probabilities",
            probs.len()
        )));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::InvalidInput(format!(
            "probabilities are not normalized (sum {sum})"
        )));
    }
    Ok(probs
        .iter()
        .enumerate()
        .map(|(k, &p)| if k == y { p - 1.0 } else { p })
        .collect())
}

#[cfg(test)]
mod tests;
