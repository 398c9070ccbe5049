//! Data ingestion, cross-validation splits and PCA as an invertible affine map.

mod dataset;
mod folds;
mod pca;

pub use dataset::{load_csv, load_csv_with, LabelTransform, LabeledDataset};
pub use folds::{kfold_split, FoldPlan};
pub use pca::{fit_pca, fit_pca_with, pca_compose_constraints, AffineMap, PcaOptions};

/// Unstratified seeded folds over `n` unlabeled points.
pub(crate) fn folds_for_points(n: usize, k: usize, seed: u64) -> crate::error::Result<FoldPlan> {
    folds::split_labels(&vec![0; n], 1, k, seed)
}
