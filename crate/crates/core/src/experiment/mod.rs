//! Config-driven experiments: train an original model, run unlearning
//! methods against it, and write CSV/JSON reports and checkpoints. Also
//! the standalone checkpoint tools behind the CLI.

mod audit;
mod config;
mod report;

use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

pub use audit::{
    audit_checkpoint, dump_bias, sweep_beta, write_bias_csv, write_sweep_csv, Audit, BiasRow, SweepPoint, Verdict,
};
pub use config::{BlobSpec, DatasetSpec, ExperimentConfig, IdxSpec, ModelSpec, SweepSpec, TrainSpec};
pub use report::{read_csv, CsvRow, ExperimentReport, ReportRow, RowStatus, CSV_FILE, JSON_FILE};

use crate::data::{load_idx, make_blobs, split_by_classes, ClassSplit, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, evaluate_model};
use crate::model::{Architecture, Checkpoint, Classifier, GradientMode};
use crate::numerics::SeededRng;
use crate::unlearning::{
    retrain, run_method, run_sgd, MethodParams, UnlearnConfig, UnlearnOutcome, STREAM_INIT, STREAM_SHUFFLE,
};

/// RNG stream for the generated training set.
pub const STREAM_DATA_TRAIN: u64 = 10;
/// RNG stream for the generated held-out set.
pub const STREAM_DATA_TEST: u64 = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Methods run on separate threads; time and RTR columns are left empty.
    Parallel,
}

/// Everything a method run needs, built once per experiment.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub origin: Classifier,
    pub split: ClassSplit,
    pub retain: Dataset,
    pub forget: Dataset,
    pub retain_test: Dataset,
    pub forget_test: Dataset,
}

fn with_class_count(d: Dataset, c: usize) -> Result<Dataset> {
    if d.class_count() == c {
        return Ok(d);
    }
    Dataset::new(d.samples().to_vec(), c)
}

/// Loads or generates the train and held-out sets.
pub fn load_data(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    match &cfg.dataset {
        DatasetSpec::Blobs(b) => {
            let train = make_blobs(
                b.classes,
                b.per_class,
                b.dim,
                b.separation,
                &mut SeededRng::with_stream(cfg.seed, STREAM_DATA_TRAIN),
            )?;
            let test = make_blobs(
                b.classes,
                b.per_class,
                b.dim,
                b.separation,
                &mut SeededRng::with_stream(cfg.seed, STREAM_DATA_TEST),
            )?;
            Ok((train, test))
        }
        DatasetSpec::Idx(spec) => {
            let train = load_idx(&spec.train_images, &spec.train_labels)?;
            let test = load_idx(&spec.test_images, &spec.test_labels)?;
            if train.dim() != test.dim() {
                return Err(Error::Shape(format!(
                    "train images have {} pixels, test images {}",
                    train.dim(),
                    test.dim()
                )));
            }
            let c = train.class_count().max(test.class_count());
            Ok((with_class_count(train, c)?, with_class_count(test, c)?))
        }
    }
}

pub fn architecture(cfg: &ExperimentConfig, data: &Dataset) -> Architecture {
    Architecture {
        input_dim: data.dim(),
        hidden: cfg.model.hidden.clone(),
        class_count: data.class_count(),
    }
}

/// Trains the original model from scratch on the full training set.
pub fn train_original(cfg: &ExperimentConfig, arch: &Architecture, train: &Dataset) -> Result<Classifier> {
    let mut model = Classifier::init(arch, &mut SeededRng::with_stream(cfg.seed, STREAM_INIT))?;
    run_sgd(
        &mut model,
        train,
        GradientMode::Standard,
        cfg.train.eta,
        cfg.train.epochs,
        cfg.train.batch_size,
        &mut SeededRng::with_stream(cfg.seed, STREAM_SHUFFLE),
    )?;
    Ok(model)
}

/// Data, splits and the trained original model.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let (train, test) = load_data(cfg)?;
    let split = ClassSplit::new(train.class_count(), cfg.forgotten.iter().copied())?;
    let (retain, forget) = split_by_classes(&train, &split)?;
    let (retain_test, forget_test) = split_by_classes(&test, &split)?;
    if retain.is_empty() || forget.is_empty() || retain_test.is_empty() || forget_test.is_empty() {
        return Err(Error::Split("every retain/forget split must contain samples".into()));
    }
    let arch = architecture(cfg, &train);
    let origin = train_original(cfg, &arch, &train)?;
    Ok(Prepared {
        origin,
        split,
        retain,
        forget,
        retain_test,
        forget_test,
    })
}

/// Config for the retrain reference row, taken from `[train]`.
pub fn retrain_reference_config(cfg: &ExperimentConfig) -> UnlearnConfig {
    UnlearnConfig {
        params: MethodParams::Retrain {
            epochs: cfg.train.epochs,
        },
        eta: cfg.train.eta,
        batch_size: cfg.train.batch_size,
        seed: cfg.seed,
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn checkpoint_name(index: usize, label: &str) -> String {
    let safe: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect();
    format!("{:02}-{safe}.ckpt", index + 1)
}

/// Runs the whole experiment and writes `report.csv`, `report.json` and
/// per-row checkpoints under `cfg.output_dir`.
///
/// A failing method becomes a failed row; the others still run. Config
/// and data errors abort before any training.
pub fn run_experiment(cfg: &ExperimentConfig, execution: Execution) -> Result<ExperimentReport> {
    let started = unix_now();
    let clock = Instant::now();
    let p = prepare(cfg)?;

    let reference_cfg = retrain_reference_config(cfg);
    let reference = retrain(&p.origin.architecture(), &p.retain, &reference_cfg)?;
    let t_retrain = reference.elapsed_seconds;

    let original_eval = evaluate_model(&p.origin, None, &p.retain_test, &p.forget_test, &p.split, None)?;
    let reference_eval = evaluate(&reference, &p.retain_test, &p.forget_test, &p.split, Some(t_retrain))?;

    let outcomes: Vec<Result<UnlearnOutcome>> = match execution {
        Execution::Sequential => cfg
            .methods
            .iter()
            .map(|m| run_method(&p.origin, &p.split, &p.retain, &p.forget, m))
            .collect(),
        Execution::Parallel => std::thread::scope(|s| {
            let handles: Vec<_> = cfg
                .methods
                .iter()
                .map(|m| {
                    let p = &p;
                    s.spawn(move || run_method(&p.origin, &p.split, &p.retain, &p.forget, m))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join()
                        .unwrap_or_else(|_| Err(Error::Numeric("method thread panicked".into())))
                })
                .collect()
        }),
    };

    let ckpt_dir = cfg.output_dir.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    let forgotten = p.split.forgotten().to_vec();
    Checkpoint::new(p.origin.clone(), forgotten.clone()).save(ckpt_dir.join("original.ckpt"))?;
    Checkpoint::new(reference.model.clone(), forgotten.clone()).save(ckpt_dir.join("retrain.ckpt"))?;

    let mut rows = vec![
        ReportRow::ok("original", None, original_eval),
        ReportRow::ok("retrain", Some(reference.config.clone()), reference_eval),
    ];
    for (i, (requested, outcome)) in cfg.methods.iter().zip(outcomes).enumerate() {
        let label = requested.method().name();
        let row = outcome.and_then(|out| {
            let mut eval = evaluate(&out, &p.retain_test, &p.forget_test, &p.split, Some(t_retrain))?;
            if execution == Execution::Parallel {
                eval.elapsed_seconds = None;
                eval.rtr = None;
            }
            Checkpoint::new(out.model, forgotten.clone()).save(ckpt_dir.join(checkpoint_name(i, label)))?;
            Ok(ReportRow::ok(label, Some(out.config), eval))
        });
        rows.push(row.unwrap_or_else(|e| ReportRow::failed(label, requested.clone(), e.to_string())));
    }

    let report = ExperimentReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        started_unix: started,
        finished_unix: unix_now(),
        total_seconds: clock.elapsed().as_secs_f64(),
        execution: match execution {
            Execution::Sequential => "sequential".into(),
            Execution::Parallel => "parallel".into(),
        },
        t_retrain,
        config: cfg.clone(),
        rows,
    };
    report.write(&cfg.output_dir)?;
    Ok(report)
}

/// Convenience for callers holding a path to a config file.
pub fn run_config_file(path: impl AsRef<Path>, execution: Execution) -> Result<ExperimentReport> {
    run_experiment(&ExperimentConfig::load(path)?, execution)
}
