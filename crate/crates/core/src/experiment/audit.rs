//! Checkpoint inspection and the β sweep.

use std::fmt;
use std::path::Path;

use serde::Serialize;

use super::config::ExperimentConfig;
use super::prepare;
use crate::data::ClassSplit;
use crate::error::{Error, Result};
use crate::metrics::{accuracy, BiasReport};
use crate::model::read_head;
use crate::unlearning::shifted;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    /// The bottom-|V| biases are exactly V and MBS is below the threshold.
    ShortcutSuspected,
    /// V can be read off the biases, but they are not extreme.
    BiasLeaks,
    Clean,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::ShortcutSuspected => "bias-dominated shortcut suspected",
            Verdict::BiasLeaks => "forgotten classes recoverable from head biases",
            Verdict::Clean => "no head-bias anomaly detected",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Audit {
    pub report: BiasReport,
    pub verdict: Verdict,
}

/// Reads only the head of a checkpoint and scores its biases against `v`.
pub fn audit_checkpoint(path: impl AsRef<Path>, v: &[usize]) -> Result<Audit> {
    let head = read_head(path)?;
    let split = ClassSplit::new(head.head.class_count(), v.iter().copied())?;
    let report = BiasReport::new(&head.head.bias, &split)?;
    let verdict = match (report.leakage_exact_match, report.bias_signature()) {
        (true, true) => Verdict::ShortcutSuspected,
        (true, false) => Verdict::BiasLeaks,
        _ => Verdict::Clean,
    };
    Ok(Audit { report, verdict })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasRow {
    pub class: usize,
    pub bias: f64,
    pub in_v: bool,
}

/// Head biases in class order. `v` overrides the forgotten labels stored
/// in the checkpoint.
pub fn dump_bias(path: impl AsRef<Path>, v: Option<&[usize]>) -> Result<Vec<BiasRow>> {
    let head = read_head(path)?;
    let c = head.head.class_count();
    let forgotten = v.map(<[usize]>::to_vec).unwrap_or(head.forgotten);
    if let Some(&bad) = forgotten.iter().find(|&&k| k >= c) {
        return Err(Error::Split(format!("class {bad} out of range for {c} classes")));
    }
    Ok(head
        .head
        .bias
        .iter()
        .enumerate()
        .map(|(class, &bias)| BiasRow {
            class,
            bias,
            in_v: forgotten.contains(&class),
        })
        .collect())
}

pub fn write_bias_csv<W: std::io::Write>(rows: &[BiasRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::InvalidInput(format!("csv: {e}")))?;
    }
    w.flush().map_err(|e| Error::io("bias csv", e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub beta: f64,
    pub retain_acc: f64,
    pub forget_acc: f64,
}

/// Trains the original model, then evaluates it on the held-out splits with
/// every β in the sweep grid subtracted from the forgotten-class biases.
pub fn sweep_beta(cfg: &ExperimentConfig) -> Result<Vec<SweepPoint>> {
    let p = prepare(cfg)?;
    cfg.sweep
        .grid()
        .into_iter()
        .map(|beta| {
            let m = shifted(&p.origin, &p.split, beta);
            Ok(SweepPoint {
                beta,
                retain_acc: accuracy(&m, &p.retain_test)?,
                forget_acc: accuracy(&m, &p.forget_test)?,
            })
        })
        .collect()
}

pub fn write_sweep_csv<W: std::io::Write>(points: &[SweepPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in points {
        w.serialize(p).map_err(|e| Error::InvalidInput(format!("csv: {e}")))?;
    }
    w.flush().map_err(|e| Error::io("sweep csv", e))
}
