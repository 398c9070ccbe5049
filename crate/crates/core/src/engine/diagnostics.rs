use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{counterfactual_plausible, median, CounterfactualRequest, EngineOptions};
use crate::classifiers::Classifier;
use crate::datamodel::{AffineMap, LabeledDataset};
use crate::density::{ClassGmm, DensityThreshold};
use crate::error::{check_dim, Error, Result};
use crate::solver::ObjectiveSpec;

/// True iff `model` predicts `y` at `x` and classifies the `neighbors` nearest
/// training samples (under `metric`, ties by index) as their own labels.
///
/// `x` and `training` are in the original space; `pca` maps into model space.
pub fn check_local_sufficiency(
    model: &Classifier,
    pca: Option<&AffineMap>,
    x: &DVector<f64>,
    y: usize,
    training: &LabeledDataset,
    neighbors: usize,
    metric: &ObjectiveSpec,
) -> Result<bool> {
    if neighbors == 0 {
        return Err(Error::Argument("neighbors must be at least 1".into()));
    }
    check_dim(training.n_features(), x.len())?;
    check_dim(metric.dim(), x.len())?;
    let to_model = |p: &DVector<f64>| match pca {
        Some(m) => m.transform(p),
        None => Ok(p.clone()),
    };
    if model.predict(&to_model(x)?)? != y {
        return Ok(false);
    }
    let mut order: Vec<(f64, usize)> = (0..training.n_samples())
        .map(|i| (metric.distance(&training.sample(i), x), i))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    for &(_, i) in order.iter().take(neighbors) {
        if model.predict(&to_model(&training.sample(i))?)? != training.labels()[i] {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Shared inputs for comparing two models' plausible counterfactuals.
#[derive(Debug, Clone, Copy)]
pub struct IndependenceSetup<'a> {
    pub models: [&'a Classifier; 2],
    pub pca: Option<&'a AffineMap>,
    /// One mixture per class, looked up by `class_id`.
    pub gmms: &'a [ClassGmm],
    /// Threshold per class id.
    pub deltas: &'a [DensityThreshold],
    pub training: &'a LabeledDataset,
    pub neighbors: usize,
    /// Distance used for both the neighbourhood and the objective; re-anchored per sample.
    pub metric: &'a ObjectiveSpec,
    pub options: EngineOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndependenceSample {
    #[serde(with = "crate::linalg::serde_vec")]
    pub x: DVector<f64>,
    pub label: usize,
    pub target: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndependenceEntry {
    pub sample: usize,
    pub objective_a: f64,
    pub objective_b: f64,
    pub abs_difference: f64,
    /// `|a - b| / max(|a|, |b|)`, zero when both vanish.
    pub relative_difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndependenceReport {
    pub entries: Vec<IndependenceEntry>,
    /// Samples where at least one model is not locally sufficient.
    pub not_sufficient: Vec<usize>,
    /// Sufficient samples where either model found no counterfactual.
    pub unexplained: Vec<usize>,
    pub median_abs_difference: Option<f64>,
    pub median_relative_difference: Option<f64>,
}

/// Plausible counterfactuals under both models at every locally sufficient
/// sample, and the spread of their objective values. Reports only.
pub fn model_independence_experiment(
    setup: &IndependenceSetup<'_>,
    samples: &[IndependenceSample],
) -> Result<IndependenceReport> {
    let mut entries = Vec::new();
    let mut not_sufficient = Vec::new();
    let mut unexplained = Vec::new();
    for (idx, s) in samples.iter().enumerate() {
        let mut sufficient = true;
        for m in setup.models {
            sufficient &= check_local_sufficiency(
                m,
                setup.pca,
                &s.x,
                s.label,
                setup.training,
                setup.neighbors,
                setup.metric,
            )?;
        }
        if !sufficient {
            not_sufficient.push(idx);
            continue;
        }
        let gmm = setup
            .gmms
            .iter()
            .find(|g| g.class_id == s.target)
            .ok_or_else(|| Error::Argument(format!("no mixture for class {}", s.target)))?;
        let delta = *setup
            .deltas
            .get(s.target)
            .ok_or_else(|| Error::Argument(format!("no threshold for class {}", s.target)))?;
        let mut req = CounterfactualRequest::new(s.x.clone(), s.target)
            .with_objective(setup.metric.clone())
            .with_delta(delta);
        req.pca = setup.pca.cloned();
        let a = counterfactual_plausible(&req, setup.models[0], gmm, &setup.options)?;
        let b = counterfactual_plausible(&req, setup.models[1], gmm, &setup.options)?;
        let (Some(oa), Some(ob)) = (a.objective_value, b.objective_value) else {
            unexplained.push(idx);
            continue;
        };
        let abs_difference = (oa - ob).abs();
        let scale = oa.abs().max(ob.abs());
        let relative_difference = if scale <= 1e-12 { 0.0 } else { abs_difference / scale };
        entries.push(IndependenceEntry {
            sample: idx,
            objective_a: oa,
            objective_b: ob,
            abs_difference,
            relative_difference,
        });
    }
    let abs: Vec<f64> = entries.iter().map(|e| e.abs_difference).collect();
    let rel: Vec<f64> = entries.iter().map(|e| e.relative_difference).collect();
    Ok(IndependenceReport {
        median_abs_difference: median(&abs),
        median_relative_difference: median(&rel),
        entries,
        not_sufficient,
        unexplained,
    })
}
