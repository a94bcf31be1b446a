//! Class-level unlearning methods behind one interface.
//!
//! Every method takes the original model by reference, works on its own
//! clone, and reports the wall-clock time of the method body only (cloning,
//! data preparation and hyperparameter resolution happen before the clock
//! starts).
//!
//! Randomness is drawn from `SeededRng::with_stream(cfg.seed, STREAM_*)` so
//! that methods sharing a seed also share batch orders: TS-BGM and TS-BGRM
//! see identical batches, and so do shallow fine-tuning and LB-HR.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{ClassSplit, Dataset, Sample};
use crate::error::{Error, Result};
use crate::metrics;
use crate::model::{Architecture, Classifier, GradientMode};
use crate::numerics::SeededRng;

/// Mini-batch order of the main optimisation data.
pub const STREAM_SHUFFLE: u64 = 1;
/// Mini-batch order of the forget set in NegGrad+.
pub const STREAM_FORGET_SHUFFLE: u64 = 2;
/// Parameter initialisation for retraining.
pub const STREAM_INIT: u64 = 3;
/// Random-label relabelling.
pub const STREAM_RELABEL: u64 = 4;

/// Largest β tried by the automatic BiasShift search.
pub const AUTO_BETA_CAP: f64 = 4096.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    Retrain,
    FineTune,
    ShallowFineTune,
    NegGradPlus,
    RandomLabel,
    BiasShift,
    TsBgm,
    TsBgrm,
    LbHr,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Retrain,
        Method::FineTune,
        Method::ShallowFineTune,
        Method::NegGradPlus,
        Method::RandomLabel,
        Method::BiasShift,
        Method::TsBgm,
        Method::TsBgrm,
        Method::LbHr,
    ];

    /// Identifier used in config files and reports.
    pub fn name(self) -> &'static str {
        match self {
            Method::Retrain => "retrain",
            Method::FineTune => "ft",
            Method::ShallowFineTune => "sf",
            Method::NegGradPlus => "neggrad+",
            Method::RandomLabel => "random-label",
            Method::BiasShift => "biasshift",
            Method::TsBgm => "ts-bgm",
            Method::TsBgrm => "ts-bgrm",
            Method::LbHr => "lb-hr",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Beta {
    Fixed(f64),
    /// Doubles β from 1 until forget-set accuracy reaches zero (capped at
    /// [`AUTO_BETA_CAP`]).
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LowerBound {
    Fixed(f64),
    /// Smallest retained-class bias of the original model.
    MinRetained,
}

/// Per-method hyperparameters; a field exists only where the method uses it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum MethodParams {
    Retrain {
        epochs: usize,
    },
    FineTune {
        epochs: usize,
    },
    ShallowFineTune {
        epochs: usize,
    },
    NegGradPlus {
        epochs: usize,
        retention_weight: f64,
    },
    RandomLabel {
        epochs: usize,
    },
    BiasShift {
        beta: Beta,
    },
    TsBgm {
        destroy_epochs: usize,
        repair_epochs: usize,
    },
    TsBgrm {
        destroy_epochs: usize,
        repair_epochs: usize,
    },
    LbHr {
        epochs: usize,
        lambda: f64,
        b_min: LowerBound,
    },
}

impl MethodParams {
    pub fn method(&self) -> Method {
        match self {
            MethodParams::Retrain { .. } => Method::Retrain,
            MethodParams::FineTune { .. } => Method::FineTune,
            MethodParams::ShallowFineTune { .. } => Method::ShallowFineTune,
            MethodParams::NegGradPlus { .. } => Method::NegGradPlus,
            MethodParams::RandomLabel { .. } => Method::RandomLabel,
            MethodParams::BiasShift { .. } => Method::BiasShift,
            MethodParams::TsBgm { .. } => Method::TsBgm,
            MethodParams::TsBgrm { .. } => Method::TsBgrm,
            MethodParams::LbHr { .. } => Method::LbHr,
        }
    }

    /// Default hyperparameters.
    pub fn defaults(method: Method) -> Self {
        match method {
            Method::Retrain => MethodParams::Retrain { epochs: 20 },
            Method::FineTune => MethodParams::FineTune { epochs: 10 },
            Method::ShallowFineTune => MethodParams::ShallowFineTune { epochs: 10 },
            Method::NegGradPlus => MethodParams::NegGradPlus {
                epochs: 10,
                retention_weight: 0.7,
            },
            Method::RandomLabel => MethodParams::RandomLabel { epochs: 10 },
            Method::BiasShift => MethodParams::BiasShift { beta: Beta::Auto },
            Method::TsBgm => MethodParams::TsBgm {
                destroy_epochs: 2,
                repair_epochs: 5,
            },
            Method::TsBgrm => MethodParams::TsBgrm {
                destroy_epochs: 2,
                repair_epochs: 5,
            },
            Method::LbHr => MethodParams::LbHr {
                epochs: 10,
                lambda: 1.0,
                b_min: LowerBound::MinRetained,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlearnConfig {
    pub params: MethodParams,
    /// SGD learning rate (ignored by BiasShift).
    pub eta: f64,
    pub batch_size: usize,
    pub seed: u64,
}

pub const DEFAULT_ETA: f64 = 0.05;
pub const DEFAULT_BATCH_SIZE: usize = 32;

impl UnlearnConfig {
    pub fn defaults(method: Method, seed: u64) -> Self {
        Self {
            params: MethodParams::defaults(method),
            eta: DEFAULT_ETA,
            batch_size: DEFAULT_BATCH_SIZE,
            seed,
        }
    }

    pub fn method(&self) -> Method {
        self.params.method()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("{}: {msg}", self.method())));
        if self.method() != Method::BiasShift {
            if !(self.eta > 0.0 && self.eta.is_finite()) {
                return bad(format!("eta must be positive, got {}", self.eta));
            }
            if self.batch_size == 0 {
                return bad("batch_size must be positive".into());
            }
        }
        match self.params {
            MethodParams::Retrain { epochs }
            | MethodParams::FineTune { epochs }
            | MethodParams::ShallowFineTune { epochs }
            | MethodParams::RandomLabel { epochs }
                if epochs == 0 =>
            {
                bad("epochs must be at least 1".into())
            }
            MethodParams::NegGradPlus {
                epochs,
                retention_weight,
            } => {
                if epochs == 0 {
                    bad("epochs must be at least 1".into())
                } else if !(0.0..=1.0).contains(&retention_weight) {
                    bad(format!("retention_weight must be in [0, 1], got {retention_weight}"))
                } else {
                    Ok(())
                }
            }
            MethodParams::BiasShift { beta: Beta::Fixed(b) } if !(b > 0.0 && b.is_finite()) => {
                bad(format!("beta must be positive, got {b}"))
            }
            MethodParams::TsBgm {
                destroy_epochs,
                repair_epochs,
            }
            | MethodParams::TsBgrm {
                destroy_epochs,
                repair_epochs,
            } if destroy_epochs == 0 || repair_epochs == 0 => {
                bad("destroy and repair epochs must be at least 1".into())
            }
            MethodParams::LbHr { epochs, lambda, b_min } => {
                if epochs == 0 {
                    bad("epochs must be at least 1".into())
                } else if !(lambda >= 0.0 && lambda.is_finite()) {
                    bad(format!("lambda must be >= 0, got {lambda}"))
                } else if matches!(b_min, LowerBound::Fixed(b) if !b.is_finite()) {
                    bad("b_min must be finite".into())
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// An unlearned model with its timing and the (resolved) config that made it.
#[derive(Debug, Clone)]
pub struct UnlearnOutcome {
    pub model: Classifier,
    pub elapsed_seconds: f64,
    pub method: Method,
    pub config: UnlearnConfig,
}

fn wrong_method(expected: Method, cfg: &UnlearnConfig) -> Error {
    Error::Config(format!("{expected} called with a {} config", cfg.method()))
}

/// Mini-batch SGD over `data` for `epochs` epochs. Batches are reshuffled
/// each epoch from `rng`.
pub fn run_sgd(
    model: &mut Classifier,
    data: &Dataset,
    mode: GradientMode<'_>,
    eta: f64,
    epochs: usize,
    batch_size: usize,
    rng: &mut SeededRng,
) -> Result<()> {
    if data.is_empty() {
        return Err(Error::InvalidInput("cannot train on an empty dataset".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &data.samples()[i]).collect();
            let grads = model.backward(&batch, mode)?;
            if !grads.loss.is_finite() {
                return Err(Error::Numeric(format!("loss diverged in epoch {epoch}")));
            }
            model
                .sgd_step(&grads, eta)
                .map_err(|e| Error::Numeric(format!("epoch {epoch}: {e}")))?;
        }
    }
    Ok(())
}

/// Runs `body` on a clone of `origin` whose extractor freeze flag is
/// `frozen`, timing only `body`. The original flag is restored afterwards.
fn timed(
    origin: &Classifier,
    frozen: bool,
    cfg: UnlearnConfig,
    body: impl FnOnce(&mut Classifier) -> Result<()>,
) -> Result<UnlearnOutcome> {
    let mut model = origin.clone();
    model.extractor.frozen = frozen;
    let start = Instant::now();
    body(&mut model)?;
    let elapsed_seconds = start.elapsed().as_secs_f64();
    model.extractor.frozen = origin.extractor.frozen;
    Ok(UnlearnOutcome {
        model,
        elapsed_seconds,
        method: cfg.method(),
        config: cfg,
    })
}

fn shuffle_rng(cfg: &UnlearnConfig) -> SeededRng {
    SeededRng::with_stream(cfg.seed, STREAM_SHUFFLE)
}

/// Returns a copy of `model` with `shift` subtracted from every forgotten
/// class bias. Accepts any real shift; used for sweeps.
pub fn shifted(model: &Classifier, split: &ClassSplit, shift: f64) -> Classifier {
    let mut out = model.clone();
    for &c in split.forgotten() {
        out.head.bias[c] -= shift;
    }
    out
}

/// `b_c ← b_c − β` for every forgotten class; nothing else changes.
pub fn bias_shift(origin: &Classifier, split: &ClassSplit, beta: f64) -> Result<UnlearnOutcome> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::Config(format!("beta must be positive, got {beta}")));
    }
    if split.class_count() != origin.class_count() {
        return Err(Error::Split(format!(
            "split is over {} classes but the model has {}",
            split.class_count(),
            origin.class_count()
        )));
    }
    let cfg = UnlearnConfig {
        params: MethodParams::BiasShift {
            beta: Beta::Fixed(beta),
        },
        eta: 0.0,
        batch_size: 0,
        seed: 0,
    };
    let mut model = origin.clone();
    let start = Instant::now();
    for &c in split.forgotten() {
        model.head.bias[c] -= beta;
    }
    let elapsed_seconds = start.elapsed().as_secs_f64();
    Ok(UnlearnOutcome {
        model,
        elapsed_seconds,
        method: Method::BiasShift,
        config: cfg,
    })
}

/// Smallest β in 1, 2, 4, … (up to [`AUTO_BETA_CAP`]) that drives accuracy
/// on `calibration` to zero. Returns the cap if none does.
pub fn auto_beta(origin: &Classifier, split: &ClassSplit, calibration: &Dataset) -> Result<f64> {
    let mut beta = 1.0;
    while beta < AUTO_BETA_CAP {
        if metrics::accuracy(&shifted(origin, split, beta), calibration)? == 0.0 {
            return Ok(beta);
        }
        beta *= 2.0;
    }
    Ok(AUTO_BETA_CAP)
}

/// Continues training every parameter on the retain set.
pub fn fine_tune(origin: &Classifier, retain: &Dataset, cfg: &UnlearnConfig) -> Result<UnlearnOutcome> {
    cfg.validate()?;
    let MethodParams::FineTune { epochs } = cfg.params else {
        return Err(wrong_method(Method::FineTune, cfg));
    };
    let mut rng = shuffle_rng(cfg);
    timed(origin, false, cfg.clone(), |m| {
        run_sgd(
            m,
            retain,
            GradientMode::Standard,
            cfg.eta,
            epochs,
            cfg.batch_size,
            &mut rng,
        )
    })
}

/// Trains only the classification head on the retain set.
pub fn shallow_fine_tune(origin: &Classifier, retain: &Dataset, cfg: &UnlearnConfig) -> Result<UnlearnOutcome> {
    cfg.validate()?;
    let MethodParams::ShallowFineTune { epochs } = cfg.params else {
        return Err(wrong_method(Method::ShallowFineTune, cfg));
    };
    let mut rng = shuffle_rng(cfg);
    timed(origin, true, cfg.clone(), |m| {
        run_sgd(
            m,
            retain,
            GradientMode::Standard,
            cfg.eta,
            epochs,
            cfg.batch_size,
            &mut rng,
        )
    })
}

/// Fresh model trained on the retain set only.
pub fn retrain(arch: &Architecture, retain: &Dataset, cfg: &UnlearnConfig) -> Result<UnlearnOutcome> {
    cfg.validate()?;
    let MethodParams::Retrain { epochs } = cfg.params else {
        return Err(wrong_method(Method::Retrain, cfg));
    };
    let mut init_rng = SeededRng::with_stream(cfg.seed, STREAM_INIT);
    let mut rng = shuffle_rng(cfg);
    let start = Instant::now();
    let mut model = Classifier::init(arch, &mut init_rng)?;
    run_sgd(
        &mut model,
        retain,
        GradientMode::Standard,
        cfg.eta,
        epochs,
        cfg.batch_size,
        &mut rng,
    )?;
    let elapsed_seconds = start.elapsed().as_secs_f64();
    Ok(UnlearnOutcome {
        model,
        elapsed_seconds,
        method: Method::Retrain,
        config: cfg.clone(),
    })
}

/// Each step descends `α·L(retain batch) − (1−α)·L(forget batch)`. One epoch
/// is one pass over the retain set; forget batches are drawn cyclically.
pub fn neg_grad_plus(
    origin: &Classifier,
    retain: &Dataset,
    forget: &Dataset,
    cfg: &UnlearnConfig,
) -> Result<UnlearnOutcome> {
    cfg.validate()?;
    let MethodParams::NegGradPlus {
        epochs,
        retention_weight,
    } = cfg.params
    else {
        return Err(wrong_method(Method::NegGradPlus, cfg));
    };
    if retain.is_empty() || forget.is_empty() {
        return Err(Error::InvalidInput(
            "NegGrad+ needs non-empty retain and forget sets".into(),
        ));
    }
    let mut rng = shuffle_rng(cfg);
    let mut forget_rng = SeededRng::with_stream(cfg.seed, STREAM_FORGET_SHUFFLE);
    let bs = cfg.batch_size;
    timed(origin, false, cfg.clone(), |m| {
        let mut order: Vec<usize> = (0..retain.len()).collect();
        let mut forget_order: Vec<usize> = (0..forget.len()).collect();
        let mut forget_batches: Vec<Vec<usize>> = Vec::new();
        for epoch in 0..epochs {
            rng.shuffle(&mut order);
            for chunk in order.chunks(bs) {
                if forget_batches.is_empty() {
                    forget_rng.shuffle(&mut forget_order);
                    forget_batches = forget_order.chunks(bs).rev().map(<[usize]>::to_vec).collect();
                }
                let fchunk = forget_batches.pop().expect("refilled above");
                let rb: Vec<&Sample> = chunk.iter().map(|&i| &retain.samples()[i]).collect();
                let fb: Vec<&Sample> = fchunk.iter().map(|&i| &forget.samples()[i]).collect();
                let gr = m.backward(&rb, GradientMode::Standard)?;
                let gf = m.backward(&fb, GradientMode::Standard)?;
                let g = gr.combine(retention_weight, &gf, -(1.0 - retention_weight))?;
                if !g.loss.is_finite() {
                    return Err(Error::Numeric(format!("loss diverged in epoch {epoch}")));
                }
                m.sgd_step(&g, cfg.eta)
                    .map_err(|e| Error::Numeric(format!("epoch {epoch}: {e}")))?;
            }
        }
        Ok(())
    })
}

/// Forget set with every label replaced by a uniformly drawn retained class.
pub fn relabel_forget(forget: &Dataset, split: &ClassSplit, rng: &mut SeededRng) -> Result<Dataset> {
    let r = split.retained();
    if r.is_empty() {
        return Err(Error::Split("no retained classes to relabel into".into()));
    }
    let samples = forget
        .iter()
        .map(|s| Sample {
            x: s.x.clone(),
            y: r[rng.below(r.len())],
        })
        .collect();
    Dataset::new(samples, forget.class_count())
}

/// Standard training on `retain ∪ relabelled forget`.
pub fn random_label(
    origin: &Classifier,
    retain: &Dataset,
    forget: &Dataset,
    split: &ClassSplit,
    cfg: &UnlearnConfig,
) -> Result<UnlearnOutcome> {
    cfg.validate()?;
    let MethodParams::RandomLabel { epochs } = cfg.params else {
        return Err(wrong_method(Method::RandomLabel, cfg));
    };
    if origin.class_count() < 2 {
        return Err(Error::InvalidInput("random-label needs at least two classes".into()));
    }
    let mut relabel_rng = SeededRng::with_stream(cfg.seed, STREAM_RELABEL);
    let mut rng = shuffle_rng(cfg);
    timed(origin, false, cfg.clone(), |m| {
        let relabelled = relabel_forget(forget, split, &mut relabel_rng)?;
        let mut samples = retain.samples().to_vec();
        samples.extend(relabelled.samples().iter().cloned());
        let combined = Dataset::new(samples, retain.class_count())?;
        run_sgd(
            m,
            &combined,
            GradientMode::Standard,
            cfg.eta,
            epochs,
            cfg.batch_size,
            &mut rng,
        )
    })
}

fn two_stage(
    origin: &Classifier,
    retain: &Dataset,
    forget: &Dataset,
    destroy_mode: GradientMode<'_>,
    destroy_epochs: usize,
    repair_epochs: usize,
    cfg: &UnlearnConfig,
) -> Result<UnlearnOutcome> {
    let mut rng = shuffle_rng(cfg);
    timed(origin, true, cfg.clone(), |m| {
        run_sgd(
            m,
            forget,
            destroy_mode,
            cfg.eta,
            destroy_epochs,
            cfg.batch_size,
            &mut rng,
        )?;
        run_sgd(
            m,
            retain,
            GradientMode::Standard,
            cfg.eta,
            repair_epochs,
            cfg.batch_size,
            &mut rng,
        )
    })
}

/// Destroy on the forget set with standard gradients, then repair on the
/// retain set. Head only.
pub fn ts_bgm(origin: &Classifier, retain: &Dataset, forget: &Dataset, cfg: &UnlearnConfig) -> Result<UnlearnOutcome> {
    cfg.validate()?;
    let MethodParams::TsBgm {
        destroy_epochs,
        repair_epochs,
    } = cfg.params
    else {
        return Err(wrong_method(Method::TsBgm, cfg));
    };
    two_stage(
        origin,
        retain,
        forget,
        GradientMode::Standard,
        destroy_epochs,
        repair_epochs,
        cfg,
    )
}

/// Destroy on the forget set with forgotten-class bias gradients reversed,
/// then repair on the retain set with standard gradients. Head only.
pub fn ts_bgrm(
    origin: &Classifier,
    retain: &Dataset,
    forget: &Dataset,
    split: &ClassSplit,
    cfg: &UnlearnConfig,
) -> Result<UnlearnOutcome> {
    cfg.validate()?;
    let MethodParams::TsBgrm {
        destroy_epochs,
        repair_epochs,
    } = cfg.params
    else {
        return Err(wrong_method(Method::TsBgrm, cfg));
    };
    two_stage(
        origin,
        retain,
        forget,
        GradientMode::BiasReversal(split),
        destroy_epochs,
        repair_epochs,
        cfg,
    )
}

/// Smallest retained-class bias.
pub fn min_retained_bias(model: &Classifier, split: &ClassSplit) -> f64 {
    split
        .retained()
        .iter()
        .map(|&r| model.head.bias[r])
        .fold(f64::INFINITY, f64::min)
}

/// Head-only training on the retain set with the lower-bound hinge penalty
/// on forgotten-class biases.
pub fn lb_hr(origin: &Classifier, retain: &Dataset, split: &ClassSplit, cfg: &UnlearnConfig) -> Result<UnlearnOutcome> {
    cfg.validate()?;
    let MethodParams::LbHr { epochs, lambda, b_min } = cfg.params else {
        return Err(wrong_method(Method::LbHr, cfg));
    };
    let b_min = match b_min {
        LowerBound::Fixed(b) => b,
        LowerBound::MinRetained => min_retained_bias(origin, split),
    };
    let resolved = UnlearnConfig {
        params: MethodParams::LbHr {
            epochs,
            lambda,
            b_min: LowerBound::Fixed(b_min),
        },
        ..cfg.clone()
    };
    let mut rng = shuffle_rng(cfg);
    let mode = GradientMode::HingeBound {
        b_min,
        lambda,
        forgotten: split,
    };
    timed(origin, true, resolved, |m| {
        run_sgd(m, retain, mode, cfg.eta, epochs, cfg.batch_size, &mut rng)
    })
}

/// Dispatches `cfg` to its method. An automatic β is resolved on the forget
/// set before timing starts.
pub fn run_method(
    origin: &Classifier,
    split: &ClassSplit,
    retain: &Dataset,
    forget: &Dataset,
    cfg: &UnlearnConfig,
) -> Result<UnlearnOutcome> {
    cfg.validate()?;
    if split.class_count() != origin.class_count() {
        return Err(Error::Split(format!(
            "split is over {} classes but the model has {}",
            split.class_count(),
            origin.class_count()
        )));
    }
    match cfg.params {
        MethodParams::Retrain { .. } => retrain(&origin.architecture(), retain, cfg),
        MethodParams::FineTune { .. } => fine_tune(origin, retain, cfg),
        MethodParams::ShallowFineTune { .. } => shallow_fine_tune(origin, retain, cfg),
        MethodParams::NegGradPlus { .. } => neg_grad_plus(origin, retain, forget, cfg),
        MethodParams::RandomLabel { .. } => random_label(origin, retain, forget, split, cfg),
        MethodParams::BiasShift { beta } => {
            let beta = match beta {
                Beta::Fixed(b) => b,
                Beta::Auto => auto_beta(origin, split, forget)?,
            };
            let mut out = bias_shift(origin, split, beta)?;
            out.config = UnlearnConfig {
                params: MethodParams::BiasShift {
                    beta: Beta::Fixed(beta),
                },
                ..cfg.clone()
            };
            Ok(out)
        }
        MethodParams::TsBgm { .. } => ts_bgm(origin, retain, forget, cfg),
        MethodParams::TsBgrm { .. } => ts_bgrm(origin, retain, forget, split, cfg),
        MethodParams::LbHr { .. } => lb_hr(origin, retain, split, cfg),
    }
}
