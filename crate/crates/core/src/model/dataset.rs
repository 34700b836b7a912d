//! Dataset ingestion: CSV import and the synthetic Gaussian-blob generator
//! that stands in for image benchmarks at desk scale.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Labeled feature rows. Features are stored flat, row-major.
#[derive(Debug, Clone)]
pub struct Dataset {
    features: Vec<f32>,
    dims: usize,
    labels: Vec<u32>,
    classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f32>, dims: usize, labels: Vec<u32>, classes: usize) -> Result<Self> {
        if dims == 0 || classes < 2 {
            return Err(Error::parameter("need dims >= 1 and classes >= 2"));
        }
        if features.len() != labels.len() * dims {
            return Err(Error::parameter(format!(
                "{} features for {} rows of width {dims}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= classes) {
            return Err(Error::parameter(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(Dataset {
            features,
            dims,
            labels,
            classes,
        })
    }

    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn label(&self, row: usize) -> u32 {
        self.labels[row]
    }

    pub fn feature_row(&self, row: usize) -> &[f32] {
        &self.features[row * self.dims..(row + 1) * self.dims]
    }

    /// Stratified split: the first `train_per_class` rows of every class go
    /// to the train set, the rest to the holdout.
    pub fn split_per_class(&self, train_per_class: usize) -> Result<(Dataset, Dataset)> {
        let mut taken = vec![0usize; self.classes];
        let mut train = DatasetBuilder::new(self.dims, self.classes);
        let mut eval = DatasetBuilder::new(self.dims, self.classes);
        for row in 0..self.rows() {
            let label = self.label(row) as usize;
            let dst = if taken[label] < train_per_class {
                taken[label] += 1;
                &mut train
            } else {
                &mut eval
            };
            dst.push(self.feature_row(row), self.label(row));
        }
        Ok((train.build()?, eval.build()?))
    }

    /// Random subsample of `ceil(fraction * rows)` rows (the attacker's
    /// stolen slice of the training data).
    pub fn subset_fraction(&self, fraction: f64, seed: u64) -> Result<Dataset> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::parameter(format!(
                "fraction must lie in (0, 1], got {fraction}"
            )));
        }
        let take = ((fraction * self.rows() as f64).ceil() as usize).max(1);
        let mut order: Vec<usize> = (0..self.rows()).collect();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
        let mut builder = DatasetBuilder::new(self.dims, self.classes);
        for &row in order.iter().take(take) {
            builder.push(self.feature_row(row), self.label(row));
        }
        builder.build()
    }
}

struct DatasetBuilder {
    features: Vec<f32>,
    labels: Vec<u32>,
    dims: usize,
    classes: usize,
}

impl DatasetBuilder {
    fn new(dims: usize, classes: usize) -> Self {
        DatasetBuilder {
            features: Vec::new(),
            labels: Vec::new(),
            dims,
            classes,
        }
    }

    fn push(&mut self, row: &[f32], label: u32) {
        self.features.extend_from_slice(row);
        self.labels.push(label);
    }

    fn build(self) -> Result<Dataset> {
        Dataset::new(self.features, self.dims, self.labels, self.classes)
    }
}

/// Parse a headerless CSV of `label,feature,...` rows. Row width is fixed
/// by the first row; errors carry the 1-based line number in `offset`.
pub fn load_csv(path: &Path, classes: usize) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::parameter("classes must be >= 2"));
    }
    let text = fs::read_to_string(path)?;
    let mut dims = None;
    let mut builder: Option<DatasetBuilder> = None;
    for (i, line) in text.lines().enumerate() {
        let line_no = (i + 1) as u64;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let label: u32 = parts
            .next()
            .unwrap()
            .trim()
            .parse()
            .map_err(|e| Error::format("csv", line_no, format!("bad label: {e}")))?;
        if label as usize >= classes {
            return Err(Error::format(
                "csv",
                line_no,
                format!("label {label} out of range for {classes} classes"),
            ));
        }
        let row: Vec<f32> = parts
            .map(|p| {
                p.trim()
                    .parse::<f32>()
                    .map_err(|e| Error::format("csv", line_no, format!("bad feature: {e}")))
            })
            .collect::<Result<_>>()?;
        if row.is_empty() {
            return Err(Error::format("csv", line_no, "row has no features"));
        }
        match dims {
            None => {
                dims = Some(row.len());
                builder = Some(DatasetBuilder::new(row.len(), classes));
            }
            Some(d) if d != row.len() => {
                return Err(Error::format(
                    "csv",
                    line_no,
                    format!("row width {} differs from first row {d}", row.len()),
                ));
            }
            _ => {}
        }
        builder.as_mut().unwrap().push(&row, label);
    }
    match builder {
        Some(b) => b.build(),
        None => Err(Error::format("csv", 0, "file has no data rows")),
    }
}

/// Seeded Gaussian clusters: one blob per class with per-coordinate spread
/// 3 around a class center drawn from N(0, 2^2). The wide spread keeps
/// classes separable in enough dimensions while individual samples still
/// straddle the decision boundaries of a scrambled network, so encrypted
/// accuracy concentrates at chance instead of voting blob-by-blob. Rows
/// come out grouped by class; training shuffles per epoch.
pub fn synth_blobs(classes: usize, dims: usize, per_class: usize, seed: u64) -> Result<Dataset> {
    if classes < 2 || dims == 0 || per_class == 0 {
        return Err(Error::parameter(
            "need classes >= 2, dims >= 1, per_class >= 1",
        ));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f32>> = (0..classes)
        .map(|_| {
            (0..dims)
                .map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal) as f32)
                .collect()
        })
        .collect();
    let mut features = Vec::with_capacity(classes * per_class * dims);
    let mut labels = Vec::with_capacity(classes * per_class);
    for (label, center) in centers.iter().enumerate() {
        for _ in 0..per_class {
            for &c in center {
                features.push(c + (3.0 * rng.sample::<f64, _>(StandardNormal)) as f32);
            }
            labels.push(label as u32);
        }
    }
    Dataset::new(features, dims, labels, classes)
}
