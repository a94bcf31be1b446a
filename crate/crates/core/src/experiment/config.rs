//! Experiment configuration, read from TOML.
//!
//! ```toml
//! seed = 0
//! forgotten = [2, 5, 7]
//! output_dir = "out"            # optional, default "report"
//!
//! [dataset]                     # optional, defaults shown
//! kind = "blobs"
//! classes = 10
//! per_class = 200
//! dim = 16
//! separation = 6.0
//!
//! # or:
//! # [dataset]
//! # kind = "idx"
//! # train_images = "train-images-idx3-ubyte"
//! # train_labels = "train-labels-idx1-ubyte"
//! # test_images = "t10k-images-idx3-ubyte"
//! # test_labels = "t10k-labels-idx1-ubyte"
//!
//! [model]
//! hidden = [32, 32]
//!
//! [train]                       # original model and the retrain reference
//! epochs = 20
//! eta = 0.05
//! batch_size = 32
//!
//! [[method]]                    # one block per method, run in order
//! name = "biasshift"
//! beta = "auto"                 # or a number
//!
//! [[method]]
//! name = "lb-hr"
//! lambda = 1.0
//! b_min = "min-retained"        # or a number
//!
//! [sweep]                       # grid for `sweep-beta`
//! start = -10.0
//! stop = 20.0
//! step = 1.0
//! ```
//!
//! Every `[[method]]` block accepts `name`, `eta`, `batch_size` and `seed`
//! (defaults 0.05, 32 and the top-level seed). The remaining keys depend on
//! the method:
//!
//! | name           | keys                                   |
//! |----------------|----------------------------------------|
//! | `retrain`      | `epochs`                               |
//! | `ft`, `sf`     | `epochs`                               |
//! | `neggrad+`     | `epochs`, `retention_weight`           |
//! | `random-label` | `epochs`                               |
//! | `biasshift`    | `beta`                                 |
//! | `ts-bgm`       | `destroy_epochs`, `repair_epochs`      |
//! | `ts-bgrm`      | `destroy_epochs`, `repair_epochs`      |
//! | `lb-hr`        | `epochs`, `lambda`, `b_min`            |
//!
//! Unknown keys anywhere, and keys that do not apply to the named method,
//! are errors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{blob_centers, ClassSplit};
use crate::error::{Error, Result};
use crate::unlearning::{Beta, LowerBound, Method, MethodParams, UnlearnConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSpec {
    Blobs(BlobSpec),
    Idx(IdxSpec),
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Blobs(BlobSpec::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlobSpec {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub separation: f64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        Self {
            classes: 10,
            per_class: 200,
            dim: 16,
            separation: 6.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxSpec {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub hidden: Vec<usize>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self { hidden: vec![32, 32] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSpec {
    pub epochs: usize,
    pub eta: f64,
    pub batch_size: usize,
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            epochs: 20,
            eta: 0.05,
            batch_size: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            start: -10.0,
            stop: 20.0,
            step: 1.0,
        }
    }
}

impl SweepSpec {
    /// Grid points from `start` to `stop` inclusive.
    pub fn grid(&self) -> Vec<f64> {
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|i| self.start + i as f64 * self.step).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub forgotten: Vec<usize>,
    pub output_dir: PathBuf,
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    pub train: TrainSpec,
    pub methods: Vec<UnlearnConfig>,
    pub sweep: SweepSpec,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    seed: u64,
    forgotten: Vec<usize>,
    output_dir: Option<PathBuf>,
    #[serde(default)]
    dataset: DatasetSpec,
    #[serde(default)]
    model: ModelSpec,
    #[serde(default)]
    train: TrainSpec,
    #[serde(default, rename = "method")]
    methods: Vec<RawMethod>,
    #[serde(default)]
    sweep: SweepSpec,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum NumberOrWord {
    Number(f64),
    Word(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMethod {
    name: String,
    eta: Option<f64>,
    batch_size: Option<usize>,
    seed: Option<u64>,
    epochs: Option<usize>,
    destroy_epochs: Option<usize>,
    repair_epochs: Option<usize>,
    retention_weight: Option<f64>,
    beta: Option<NumberOrWord>,
    lambda: Option<f64>,
    b_min: Option<NumberOrWord>,
}

impl RawMethod {
    fn into_config(self, global_seed: u64) -> Result<UnlearnConfig> {
        let method: Method = self.name.parse()?;
        let mut cfg = UnlearnConfig::defaults(method, self.seed.unwrap_or(global_seed));
        if let Some(eta) = self.eta {
            cfg.eta = eta;
        }
        if let Some(b) = self.batch_size {
            cfg.batch_size = b;
        }
        let reject = |key: &str| Error::Config(format!("key `{key}` does not apply to method {method}"));

        let mut epochs_used = false;
        let mut two_stage_used = false;
        let mut retention_used = false;
        let mut beta_used = false;
        let mut hinge_used = false;
        match &mut cfg.params {
            MethodParams::Retrain { epochs }
            | MethodParams::FineTune { epochs }
            | MethodParams::ShallowFineTune { epochs }
            | MethodParams::RandomLabel { epochs } => {
                epochs_used = true;
                if let Some(e) = self.epochs {
                    *epochs = e;
                }
            }
            MethodParams::NegGradPlus {
                epochs,
                retention_weight,
            } => {
                epochs_used = true;
                retention_used = true;
                if let Some(e) = self.epochs {
                    *epochs = e;
                }
                if let Some(w) = self.retention_weight {
                    *retention_weight = w;
                }
            }
            MethodParams::BiasShift { beta } => {
                beta_used = true;
                match &self.beta {
                    Some(NumberOrWord::Number(b)) => *beta = Beta::Fixed(*b),
                    Some(NumberOrWord::Word(w)) if w == "auto" => *beta = Beta::Auto,
                    Some(NumberOrWord::Word(w)) => {
                        return Err(Error::Config(format!("beta must be a number or \"auto\", got {w:?}")))
                    }
                    None => {}
                }
            }
            MethodParams::TsBgm {
                destroy_epochs,
                repair_epochs,
            }
            | MethodParams::TsBgrm {
                destroy_epochs,
                repair_epochs,
            } => {
                two_stage_used = true;
                if let Some(e) = self.destroy_epochs {
                    *destroy_epochs = e;
                }
                if let Some(e) = self.repair_epochs {
                    *repair_epochs = e;
                }
            }
            MethodParams::LbHr { epochs, lambda, b_min } => {
                epochs_used = true;
                hinge_used = true;
                if let Some(e) = self.epochs {
                    *epochs = e;
                }
                if let Some(l) = self.lambda {
                    *lambda = l;
                }
                match &self.b_min {
                    Some(NumberOrWord::Number(b)) => *b_min = LowerBound::Fixed(*b),
                    Some(NumberOrWord::Word(w)) if w == "min-retained" => *b_min = LowerBound::MinRetained,
                    Some(NumberOrWord::Word(w)) => {
                        return Err(Error::Config(format!(
                            "b_min must be a number or \"min-retained\", got {w:?}"
                        )))
                    }
                    None => {}
                }
            }
        }
        if self.epochs.is_some() && !epochs_used {
            return Err(reject("epochs"));
        }
        if (self.destroy_epochs.is_some() || self.repair_epochs.is_some()) && !two_stage_used {
            return Err(reject(if self.destroy_epochs.is_some() {
                "destroy_epochs"
            } else {
                "repair_epochs"
            }));
        }
        if self.retention_weight.is_some() && !retention_used {
            return Err(reject("retention_weight"));
        }
        if self.beta.is_some() && !beta_used {
            return Err(reject("beta"));
        }
        if self.lambda.is_some() && !hinge_used {
            return Err(reject("lambda"));
        }
        if self.b_min.is_some() && !hinge_used {
            return Err(reject("b_min"));
        }
        if (self.eta.is_some() || self.batch_size.is_some()) && method == Method::BiasShift {
            return Err(reject(if self.eta.is_some() { "eta" } else { "batch_size" }));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl ExperimentConfig {
    /// The default blobs task with the given forgotten classes and methods
    /// (each with default hyperparameters).
    pub fn desk(seed: u64, forgotten: &[usize], methods: &[Method]) -> Result<Self> {
        let cfg = Self {
            seed,
            forgotten: forgotten.to_vec(),
            output_dir: PathBuf::from("report"),
            dataset: DatasetSpec::default(),
            model: ModelSpec::default(),
            train: TrainSpec::default(),
            methods: methods.iter().map(|&m| UnlearnConfig::defaults(m, seed)).collect(),
            sweep: SweepSpec::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let methods = raw
            .methods
            .into_iter()
            .map(|m| m.into_config(raw.seed))
            .collect::<Result<Vec<_>>>()?;
        let cfg = Self {
            seed: raw.seed,
            forgotten: raw.forgotten,
            output_dir: raw.output_dir.unwrap_or_else(|| PathBuf::from("report")),
            dataset: raw.dataset,
            model: raw.model,
            train: raw.train,
            methods,
            sweep: raw.sweep,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. Relative IDX paths are resolved against the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let (DatasetSpec::Idx(spec), Some(dir)) = (&mut cfg.dataset, path.parent()) {
            for p in [
                &mut spec.train_images,
                &mut spec.train_labels,
                &mut spec.test_images,
                &mut spec.test_labels,
            ] {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    /// Checks everything that can be checked without touching data.
    pub fn validate(&self) -> Result<()> {
        if self.forgotten.is_empty() {
            return Err(Error::Config("`forgotten` must name at least one class".into()));
        }
        if let DatasetSpec::Blobs(b) = &self.dataset {
            if b.per_class == 0 {
                return Err(Error::Config("dataset.per_class must be positive".into()));
            }
            blob_centers(b.classes, b.dim, b.separation)?;
            ClassSplit::new(b.classes, self.forgotten.iter().copied()).map_err(|e| Error::Config(e.to_string()))?;
        }
        if self.model.hidden.contains(&0) {
            return Err(Error::Config("model.hidden widths must be positive".into()));
        }
        let t = &self.train;
        if t.epochs == 0 || t.batch_size == 0 || !(t.eta > 0.0 && t.eta.is_finite()) {
            return Err(Error::Config(
                "train.epochs and train.batch_size must be positive and train.eta positive and finite".into(),
            ));
        }
        for m in &self.methods {
            m.validate()?;
        }
        let s = &self.sweep;
        if !(s.step > 0.0 && s.step.is_finite() && s.start.is_finite() && s.stop.is_finite() && s.start <= s.stop) {
            return Err(Error::Config(
                "sweep needs finite start <= stop and a positive step".into(),
            ));
        }
        Ok(())
    }
}
