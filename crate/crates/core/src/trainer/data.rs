//! Labeled feature data: a Gaussian class generator and a loader for
//! delimited text files.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Row-major feature matrix with one class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
    pub dim: usize,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, dim: usize, num_classes: usize) -> Result<Self> {
        if dim == 0 || features.len() != labels.len() * dim {
            return Err(Error::Data(format!(
                "{} features do not form {} rows of width {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(y) = labels.iter().find(|y| **y >= num_classes) {
            return Err(Error::Data(format!("label {y} outside {num_classes} classes")));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::Data("features must be finite".into()));
        }
        Ok(Self { features, labels, dim, num_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        let mut features = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            features.extend_from_slice(self.row(i));
        }
        Self {
            features,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            dim: self.dim,
            num_classes: self.num_classes,
        }
    }

    /// Sample indices grouped by label.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_classes];
        for (i, y) in self.labels.iter().enumerate() {
            out[*y].push(i);
        }
        out
    }
}

/// One device's local data.
#[derive(Debug, Clone, PartialEq)]
pub struct DataShard {
    pub owner: usize,
    pub data: Dataset,
}

/// Unit-variance Gaussian classes. Class `k` is centred at
/// `separation * sqrt(2) * e_k`, so neighbouring means are `2 * separation`
/// standard deviations apart. Rows are ordered by class.
pub fn make_synthetic_dataset(
    num_classes: usize,
    dim: usize,
    samples_per_class: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_classes < 2 || dim < num_classes {
        return Err(Error::Data(format!(
            "need at least two classes and dim >= classes, got {num_classes} classes in {dim} dims"
        )));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(Error::Data(format!("separation must be non-negative, got {separation}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset = separation * std::f64::consts::SQRT_2;
    let n = num_classes * samples_per_class;
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for k in 0..num_classes {
        for _ in 0..samples_per_class {
            for j in 0..dim {
                let z: f64 = StandardNormal.sample(&mut rng);
                features.push(if j == k { z + offset } else { z });
            }
            labels.push(k);
        }
    }
    Dataset::new(features, labels, dim, num_classes)
}

/// Reads a feature file (one sample per line) and a label file (one class
/// index per line). `num_classes` defaults to one more than the largest label.
pub fn load_delimited(
    features_path: &Path,
    labels_path: &Path,
    delimiter: u8,
    num_classes: Option<usize>,
) -> Result<Dataset> {
    let reader =
        |p: &Path| csv::ReaderBuilder::new().has_headers(false).delimiter(delimiter).trim(csv::Trim::All).from_path(p);
    let mut features = Vec::new();
    let mut dim = None;
    for (line, rec) in reader(features_path)?.records().enumerate() {
        let rec = rec?;
        if *dim.get_or_insert(rec.len()) != rec.len() {
            return Err(Error::Data(format!("feature row {line} has {} columns", rec.len())));
        }
        for field in rec.iter() {
            features.push(field.parse::<f64>().map_err(|e| Error::Data(format!("feature row {line}: {e}")))?);
        }
    }
    let mut labels = Vec::new();
    for (line, rec) in reader(labels_path)?.records().enumerate() {
        let rec = rec?;
        let field = rec.get(0).unwrap_or("");
        labels.push(field.parse::<usize>().map_err(|e| Error::Data(format!("label row {line}: {e}")))?);
    }
    if labels.is_empty() {
        return Err(Error::Data("no samples in input files".into()));
    }
    let k = num_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    Dataset::new(features, labels, dim.unwrap_or(0), k)
}
