//! Datasets, class splits, and the synthetic Gaussian-blob generator.

mod idx;

pub use idx::{load_idx, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: usize,
}

/// Labelled samples of a common dimension over `class_count` classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    samples: Vec<Sample>,
    class_count: usize,
    dim: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, class_count: usize) -> Result<Self> {
        if class_count == 0 {
            return Err(Error::InvalidInput("class count must be positive".into()));
        }
        let dim = samples.first().map_or(0, |s| s.x.len());
        for (i, s) in samples.iter().enumerate() {
            if s.y >= class_count {
                return Err(Error::InvalidInput(format!(
                    "sample {i} has label {} but there are only {class_count} classes",
                    s.y
                )));
            }
            if s.x.len() != dim {
                return Err(Error::Shape(format!(
                    "sample {i} has dimension {} but sample 0 has {dim}",
                    s.x.len()
                )));
            }
        }
        Ok(Self {
            samples,
            class_count,
            dim,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Feature dimension (0 for an empty dataset).
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Sample> {
        self.samples.iter()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for s in &self.samples {
            counts[s.y] += 1;
        }
        counts
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a Sample;
    type IntoIter = std::slice::Iter<'a, Sample>;

    fn into_iter(self) -> Self::IntoIter {
        self.samples.iter()
    }
}

/// Partition of `0..class_count` into forgotten classes V and retained
/// classes R. Both sides are non-empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSplit {
    class_count: usize,
    forgotten: Vec<usize>,
    retained: Vec<usize>,
}

impl ClassSplit {
    pub fn new(class_count: usize, forgotten: impl IntoIterator<Item = usize>) -> Result<Self> {
        let v: BTreeSet<usize> = forgotten.into_iter().collect();
        if v.is_empty() {
            return Err(Error::Split("forgotten class set is empty".into()));
        }
        if let Some(&bad) = v.iter().find(|&&c| c >= class_count) {
            return Err(Error::Split(format!(
                "forgotten class {bad} is out of range for {class_count} classes"
            )));
        }
        if v.len() == class_count {
            return Err(Error::Split("forgotten set covers every class".into()));
        }
        let retained = (0..class_count).filter(|c| !v.contains(c)).collect();
        Ok(Self {
            class_count,
            forgotten: v.into_iter().collect(),
            retained,
        })
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Sorted forgotten labels.
    pub fn forgotten(&self) -> &[usize] {
        &self.forgotten
    }

    /// Sorted retained labels.
    pub fn retained(&self) -> &[usize] {
        &self.retained
    }

    pub fn is_forgotten(&self, class: usize) -> bool {
        self.forgotten.binary_search(&class).is_ok()
    }
}

/// Splits `d` into `(retain, forget)`; relative sample order is kept.
pub fn split_by_classes(d: &Dataset, split: &ClassSplit) -> Result<(Dataset, Dataset)> {
    if split.class_count() != d.class_count() {
        return Err(Error::Split(format!(
            "split is over {} classes but dataset has {}",
            split.class_count(),
            d.class_count()
        )));
    }
    let (forget, retain): (Vec<Sample>, Vec<Sample>) = d.samples.iter().cloned().partition(|s| split.is_forgotten(s.y));
    let make = |samples| Dataset {
        samples,
        class_count: d.class_count,
        dim: d.dim,
    };
    Ok((make(retain), make(forget)))
}

/// Blob centres: class `k < dim` sits at `a·e_k`, class `dim + k` at `-a·e_k`,
/// with `a = separation / √2`. Any two centres are at least `separation` apart.
pub fn blob_centers(class_count: usize, dim: usize, separation: f64) -> Result<Vec<Vec<f64>>> {
    if class_count == 0 || dim == 0 {
        return Err(Error::Config("class count and dimension must be positive".into()));
    }
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(Error::Config(format!("separation must be positive, got {separation}")));
    }
    if class_count > 2 * dim {
        return Err(Error::Config(format!(
            "dimension {dim} can place at most {} separated centres, {class_count} requested",
            2 * dim
        )));
    }
    let a = separation / std::f64::consts::SQRT_2;
    Ok((0..class_count)
        .map(|k| {
            let mut c = vec![0.0; dim];
            if k < dim {
                c[k] = a;
            } else {
                c[k - dim] = -a;
            }
            c
        })
        .collect())
}

/// `per_class` unit-variance isotropic Gaussian samples around each of
/// `class_count` centres (see [`blob_centers`]), in class-major order.
pub fn make_blobs(
    class_count: usize,
    per_class: usize,
    dim: usize,
    separation: f64,
    rng: &mut SeededRng,
) -> Result<Dataset> {
    if per_class == 0 {
        return Err(Error::Config("per-class sample count must be positive".into()));
    }
    let centers = blob_centers(class_count, dim, separation)?;
    let mut samples = Vec::with_capacity(class_count * per_class);
    for (y, center) in centers.iter().enumerate() {
        for _ in 0..per_class {
            let x = center.iter().map(|&c| c + rng.normal()).collect();
            samples.push(Sample { x, y });
        }
    }
    Dataset::new(samples, class_count)
}
