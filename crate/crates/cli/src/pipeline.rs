//! Per-fold fitting: projection, classifier, class densities and thresholds.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use plausicf_core::classifiers::{fit_softmax, fit_tree, Classifier, SoftmaxOptions, TreeOptions};
use plausicf_core::datamodel::{fit_pca_with, load_csv_with, AffineMap, FoldPlan, LabelTransform, LabeledDataset, PcaOptions};
use plausicf_core::density::{
    fit_kde, quantile_threshold, relative_bandwidth_grid, select_gmm_components, ClassGmm, ClassKde,
    DensityThreshold, GmmOptions, GmmSelection,
};
use plausicf_core::solver::ObjectiveSpec;

use crate::config::{ExperimentConfig, ModelKind, ObjectiveKind};
use crate::error::CliResult;

/// SplitMix64 finaliser folded over `tags`; gives independent seeds per
/// (purpose, fold, sample) without shared RNG state.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    };
    tags.iter().fold(mix(seed), |acc, &t| mix(acc ^ mix(t)))
}

pub(crate) const TAG_FOLDS: u64 = 1;
pub(crate) const TAG_GMM: u64 = 2;
pub(crate) const TAG_KDE: u64 = 3;
pub(crate) const TAG_TARGET: u64 = 4;
pub(crate) const TAG_MODEL: u64 = 5;

pub fn load_dataset(cfg: &ExperimentConfig) -> CliResult<LabeledDataset> {
    let transform = match cfg.label_threshold {
        Some(t) => LabelTransform::Threshold(t),
        None => LabelTransform::Identity,
    };
    Ok(load_csv_with(&cfg.dataset, &cfg.label_column, transform)?)
}

pub fn fold_plan(cfg: &ExperimentConfig, ds: &LabeledDataset) -> CliResult<FoldPlan> {
    let plan = plausicf_core::datamodel::kfold_split(ds, cfg.cv_folds, derive_seed(cfg.seed, &[TAG_FOLDS]))?;
    if !plan.stratified {
        log::warn!("a class has fewer than {} samples; folds are not stratified", cfg.cv_folds);
    }
    Ok(plan)
}

/// Mixture and threshold of one class.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassDensity {
    pub gmm: ClassGmm,
    pub delta: DensityThreshold,
    pub selection: GmmSelection,
}

/// Everything fitted on one training fold.
#[derive(Debug, Clone)]
pub struct FoldModels {
    pub fold: usize,
    pub pca: Option<AffineMap>,
    pub classifier: Classifier,
    /// Indexed by class id.
    pub densities: Vec<ClassDensity>,
    pub kdes: Vec<ClassKde>,
    /// Training data in the original space.
    pub train: LabeledDataset,
}

impl FoldModels {
    pub fn to_model_space(&self, x: &DVector<f64>) -> CliResult<DVector<f64>> {
        Ok(match &self.pca {
            Some(map) => map.transform(x)?,
            None => x.clone(),
        })
    }
}

pub fn fit_classifier(cfg: &ExperimentConfig, kind: ModelKind, latent: &LabeledDataset, fold: usize) -> CliResult<Classifier> {
    Ok(match kind {
        ModelKind::Softmax => {
            let opts = SoftmaxOptions {
                lr: cfg.softmax_lr,
                epochs: cfg.softmax_epochs,
                l2: cfg.softmax_l2,
                seed: derive_seed(cfg.seed, &[TAG_MODEL, fold as u64]),
                standardize: true,
            };
            Classifier::Softmax(fit_softmax(latent, &opts)?.model)
        }
        ModelKind::Tree => {
            let opts = TreeOptions { max_depth: cfg.tree_max_depth, min_leaf: cfg.tree_min_leaf };
            Classifier::Tree(fit_tree(latent, &opts)?)
        }
    })
}

/// Projection and the class densities of one training fold.
pub fn fit_densities(
    cfg: &ExperimentConfig,
    train: &LabeledDataset,
    fold: usize,
) -> CliResult<(Option<AffineMap>, LabeledDataset, Vec<ClassDensity>, Vec<ClassKde>)> {
    let pca = match cfg.pca_components {
        Some(k) => Some(fit_pca_with(train, k, PcaOptions { standardize: cfg.pca_standardize })?),
        None => None,
    };
    let latent = match &pca {
        Some(map) => map.transform_dataset(train)?,
        None => train.clone(),
    };
    let mut densities = Vec::with_capacity(latent.n_classes());
    let mut kdes = Vec::with_capacity(latent.n_classes());
    for class in 0..latent.n_classes() {
        let pts = latent.class_points(class);
        let tags = [fold as u64, class as u64];
        let opts = GmmOptions {
            seed: derive_seed(cfg.seed, &[TAG_GMM, tags[0], tags[1]]),
            restarts: cfg.gmm_restarts,
            ..GmmOptions::default()
        };
        let (fit, selection) = select_gmm_components(&pts, &cfg.gmm_components, cfg.hyper_folds, &opts)?;
        let mut gmm = fit.gmm;
        gmm.class_id = class;
        let delta = quantile_threshold(&gmm, &pts, cfg.delta_quantile)?;
        log::debug!("fold {fold} class {class}: {} components, log delta {:.3}", selection.components, delta.log_delta());
        densities.push(ClassDensity { gmm, delta, selection });
        let (lo, hi, count) = cfg.kde_grid;
        let grid = relative_bandwidth_grid(&pts, lo, hi, count);
        kdes.push(fit_kde(&pts, &grid, cfg.hyper_folds, derive_seed(cfg.seed, &[TAG_KDE, tags[0], tags[1]]))?);
    }
    Ok((pca, latent, densities, kdes))
}

pub fn fit_fold(cfg: &ExperimentConfig, ds: &LabeledDataset, plan: &FoldPlan, fold: usize) -> CliResult<FoldModels> {
    let train = ds.subset(&plan.train_indices(fold));
    let (pca, latent, densities, kdes) = fit_densities(cfg, &train, fold)?;
    let classifier = fit_classifier(cfg, cfg.model, &latent, fold)?;
    Ok(FoldModels { fold, pca, classifier, densities, kdes, train })
}

/// Objective anchored at the origin; re-anchored per query.
pub fn objective_template(cfg: &ExperimentConfig, train: &LabeledDataset) -> CliResult<ObjectiveSpec> {
    let d = train.n_features();
    Ok(match cfg.objective {
        ObjectiveKind::L1 => ObjectiveSpec::l1(DVector::zeros(d)),
        ObjectiveKind::Mahalanobis => ObjectiveSpec::mahalanobis(DVector::zeros(d), training_precision(train.features()))?,
    })
}

/// Inverse of the (floored) sample covariance.
fn training_precision(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows().max(2) as f64;
    let mean = x.row_mean();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let mut cov = centered.tr_mul(&centered) / (n - 1.0);
    let d = cov.nrows();
    let floor = (cov.trace() / d as f64).max(1.0) * 1e-6;
    for i in 0..d {
        cov[(i, i)] += floor;
    }
    let inv = cov.cholesky().map(|c| c.inverse()).unwrap_or_else(|| DMatrix::identity(d, d));
    (&inv + inv.transpose()) * 0.5
}
