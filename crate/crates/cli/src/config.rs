use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Softmax,
    Tree,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Softmax => "softmax",
            ModelKind::Tree => "tree",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveKind {
    L1,
    Mahalanobis,
}

/// Everything a fit / experiment / diagnose run needs. Missing JSON keys take
/// the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    /// Name used in tables and artifact file names; defaults to the file stem.
    pub name: Option<String>,
    pub label_column: String,
    /// Binarise the label as `label >= threshold`.
    pub label_threshold: Option<f64>,
    pub pca_components: Option<usize>,
    pub pca_standardize: bool,
    pub cv_folds: usize,
    pub hyper_folds: usize,
    pub model: ModelKind,
    pub objective: ObjectiveKind,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Quantile of the training densities used as threshold; 0.5 is the median.
    pub delta_quantile: f64,
    pub gmm_components: Vec<usize>,
    pub gmm_restarts: usize,
    /// Log10 range and size of the KDE bandwidth grid, relative to the data scale.
    pub kde_grid: (f64, f64, usize),
    pub tree_max_depth: usize,
    pub tree_min_leaf: usize,
    pub softmax_epochs: usize,
    pub softmax_lr: f64,
    pub softmax_l2: f64,
    /// Region shrink applied to classifier regions.
    pub margin: f64,
    /// Nearest training samples checked by the local sufficiency test.
    pub neighbors: usize,
    /// `[height, width]`; enables PGM dumps.
    pub image_shape: Option<[usize; 2]>,
    /// Multiplier applied to feature values before clamping to 0..=255.
    pub image_scale: f64,
    /// Cap on explained test samples per fold (first ones in row order).
    pub max_test_samples: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::new(),
            name: None,
            label_column: "label".into(),
            label_threshold: None,
            pca_components: None,
            pca_standardize: false,
            cv_folds: 4,
            hyper_folds: 5,
            model: ModelKind::Softmax,
            objective: ObjectiveKind::L1,
            seed: 0,
            output_dir: PathBuf::from("out"),
            delta_quantile: 0.5,
            gmm_components: (1..=8).collect(),
            gmm_restarts: 5,
            kde_grid: (-1.5, 0.5, 12),
            tree_max_depth: 5,
            tree_min_leaf: 1,
            softmax_epochs: 2000,
            softmax_lr: 0.1,
            softmax_l2: 1e-4,
            margin: plausicf_core::engine::DEFAULT_MARGIN,
            neighbors: 5,
            image_shape: None,
            image_scale: 1.0,
            max_test_samples: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?;
        // relative dataset paths are taken from the config's directory
        if cfg.dataset.is_relative() && !cfg.dataset.as_os_str().is_empty() {
            if let Some(dir) = path.parent() {
                let joined = dir.join(&cfg.dataset);
                if joined.exists() {
                    cfg.dataset = joined;
                }
            }
        }
        Ok(cfg)
    }

    pub fn dataset_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            self.dataset
                .file_stem()
                .map_or_else(|| "dataset".into(), |s| s.to_string_lossy().into_owned())
        })
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Usage(m));
        if self.cv_folds < 2 {
            return bad(format!("cv_folds must be >= 2, got {}", self.cv_folds));
        }
        if self.hyper_folds < 2 {
            return bad(format!("hyper_folds must be >= 2, got {}", self.hyper_folds));
        }
        if !(self.delta_quantile > 0.0 && self.delta_quantile < 1.0) {
            return bad(format!("delta_quantile must lie in (0, 1), got {}", self.delta_quantile));
        }
        if self.gmm_components.is_empty() || self.gmm_components.contains(&0) {
            return bad("gmm_components must be a non-empty list of positive counts".into());
        }
        if self.kde_grid.2 == 0 {
            return bad("kde_grid needs at least one bandwidth".into());
        }
        if self.neighbors == 0 {
            return bad("neighbors must be >= 1".into());
        }
        if self.pca_components == Some(0) {
            return bad("pca_components must be >= 1".into());
        }
        if !self.dataset.exists() {
            return bad(format!("dataset not found: {}", self.dataset.display()));
        }
        Ok(())
    }
}
