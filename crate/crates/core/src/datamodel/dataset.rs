use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Feature matrix with contiguous integer class labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    #[serde(with = "crate::linalg::serde_rows")]
    features: DMatrix<f64>,
    labels: Vec<usize>,
    feature_names: Vec<String>,
    /// Original label value for each class id.
    class_values: Vec<f64>,
}

/// How raw label cells are turned into classes before re-encoding.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum LabelTransform {
    #[default]
    Identity,
    /// `value >= threshold` becomes class value 1, everything else 0.
    Threshold(f64),
}

impl LabeledDataset {
    /// Builds a dataset from already-encoded labels. Labels must be `< n_classes`
    /// and every feature finite.
    pub fn new(
        features: DMatrix<f64>,
        labels: Vec<usize>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let n_classes = labels.iter().max().map_or(0, |m| m + 1);
        let class_values = (0..n_classes).map(|c| c as f64).collect();
        Self::with_class_values(features, labels, feature_names, class_values)
    }

    fn with_class_values(
        features: DMatrix<f64>,
        labels: Vec<usize>,
        feature_names: Vec<String>,
        class_values: Vec<f64>,
    ) -> Result<Self> {
        if features.nrows() == 0 || features.ncols() == 0 {
            return Err(Error::Argument("dataset needs n >= 1 and d >= 1".into()));
        }
        if labels.len() != features.nrows() {
            return Err(Error::DimensionMismatch {
                expected: features.nrows(),
                got: labels.len(),
            });
        }
        if feature_names.len() != features.ncols() {
            return Err(Error::DimensionMismatch {
                expected: features.ncols(),
                got: feature_names.len(),
            });
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= class_values.len()) {
            return Err(Error::Argument(format!("label {bad} out of range")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("non-finite feature value".into()));
        }
        Ok(Self {
            features,
            labels,
            feature_names,
            class_values,
        })
    }

    /// Re-encodes arbitrary numeric labels to `0..K` in ascending value order.
    pub fn from_raw_labels(
        features: DMatrix<f64>,
        raw_labels: &[f64],
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let mut values: Vec<f64> = raw_labels.to_vec();
        values.sort_by(f64::total_cmp);
        values.dedup();
        let labels = raw_labels
            .iter()
            .map(|v| values.partition_point(|u| u < v))
            .collect();
        Self::with_class_values(features, labels, feature_names, values)
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// Original label value of each class id.
    pub fn class_values(&self) -> &[f64] {
        &self.class_values
    }

    pub fn n_samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.class_values.len()
    }

    pub fn sample(&self, i: usize) -> DVector<f64> {
        self.features.row(i).transpose()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Rows with the given class, as an `n_c x d` matrix.
    pub fn class_points(&self, class: usize) -> DMatrix<f64> {
        let rows: Vec<usize> = (0..self.n_samples())
            .filter(|&i| self.labels[i] == class)
            .collect();
        self.features.select_rows(rows.iter())
    }

    /// Subset in the given row order. Keeps the full class mapping so ids stay stable.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(indices.iter()),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            feature_names: self.feature_names.clone(),
            class_values: self.class_values.clone(),
        }
    }

    /// Same labels, new features (e.g. after a PCA transform).
    pub fn with_features(&self, features: DMatrix<f64>, feature_names: Vec<String>) -> Result<Self> {
        Self::with_class_values(
            features,
            self.labels.clone(),
            feature_names,
            self.class_values.clone(),
        )
    }
}

/// Reads a comma-separated numeric table with a header row.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<LabeledDataset> {
    load_csv_with(path, label_column, LabelTransform::Identity)
}

pub fn load_csv_with(
    path: impl AsRef<Path>,
    label_column: &str,
    transform: LabelTransform,
) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let ingest = |message: String| Error::Ingestion {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| ingest(format!("cannot read file: {e}")))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| ingest(format!("cannot read header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(ingest("empty file".into()));
    }
    let label_idx = header
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| ingest(format!("unknown label column '{label_column}'")))?;

    let mut values = Vec::new();
    let mut raw_labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| match e.position() {
            Some(pos) => ingest(format!("row {}: {e}", pos.line())),
            None => ingest(e.to_string()),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.iter().all(str::is_empty) {
            continue;
        }
        for (col, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                ingest(format!(
                    "row {line}, column '{}': cannot parse '{cell}' as a number",
                    header[col]
                ))
            })?;
            if !v.is_finite() {
                return Err(ingest(format!("row {line}, column '{}': non-finite value", header[col])));
            }
            if col == label_idx {
                raw_labels.push(match transform {
                    LabelTransform::Identity => v,
                    LabelTransform::Threshold(t) => f64::from(u8::from(v >= t)),
                });
            } else {
                values.push(v);
            }
        }
    }
    if raw_labels.is_empty() {
        return Err(ingest("no data rows".into()));
    }
    let d = header.len() - 1;
    if d == 0 {
        return Err(ingest("no feature columns".into()));
    }
    let features = DMatrix::from_row_slice(raw_labels.len(), d, &values);
    let names = header
        .into_iter()
        .enumerate()
        .filter(|&(i, _)| i != label_idx)
        .map(|(_, h)| h)
        .collect();
    LabeledDataset::from_raw_labels(features, &raw_labels, names)
}
