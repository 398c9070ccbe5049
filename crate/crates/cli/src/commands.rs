//! The four subcommands: fit, explain, experiment, diagnose.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use plausicf_core::classifiers::Classifier;
use plausicf_core::datamodel::AffineMap;
use plausicf_core::density::{ClassKde, DensityThreshold};
use plausicf_core::engine::{
    audit, check_local_sufficiency, counterfactual_baseline, counterfactual_plausible, model_independence_experiment,
    median, CounterfactualRequest, CounterfactualResult, EngineOptions, IndependenceEntry, IndependenceSample,
    IndependenceSetup,
};
use plausicf_core::solver::ObjectiveSpec;

use crate::config::{ExperimentConfig, ModelKind};
use crate::error::{CliError, CliResult};
use crate::experiment::{random_target, write_json};
use crate::pipeline::{fit_classifier, fit_densities, fit_fold, fold_plan, load_dataset, objective_template, ClassDensity};

/// A trained classifier with the projection and objective it was used with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub dataset: String,
    pub fold: usize,
    pub seed: u64,
    pub feature_names: Vec<String>,
    pub class_values: Vec<f64>,
    pub margin: f64,
    pub pca: Option<AffineMap>,
    /// Anchored at the origin; re-anchored at every query.
    pub objective: ObjectiveSpec,
    pub classifier: Classifier,
}

pub fn artifact_prefix(cfg: &ExperimentConfig, fold: usize) -> String {
    format!("{}_fold{fold}_seed{}", cfg.dataset_name(), cfg.seed)
}

pub fn model_artifact_name(cfg: &ExperimentConfig, fold: usize) -> String {
    format!("{}_model-{}.json", artifact_prefix(cfg, fold), cfg.model.name())
}

pub fn gmm_artifact_name(cfg: &ExperimentConfig, fold: usize, class: usize) -> String {
    format!("{}_gmm-class{class}.json", artifact_prefix(cfg, fold))
}

pub fn kde_artifact_name(cfg: &ExperimentConfig, fold: usize, class: usize) -> String {
    format!("{}_kde-class{class}.json", artifact_prefix(cfg, fold))
}

/// Fits every fold and writes one model, one mixture and one KDE per class.
pub fn cmd_fit(cfg: &ExperimentConfig) -> CliResult<Vec<PathBuf>> {
    cfg.validate()?;
    let ds = load_dataset(cfg)?;
    let plan = fold_plan(cfg, &ds)?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut written = Vec::new();
    for fold in 0..cfg.cv_folds {
        let fm = fit_fold(cfg, &ds, &plan, fold)?;
        let artifact = ModelArtifact {
            dataset: cfg.dataset_name(),
            fold,
            seed: cfg.seed,
            feature_names: ds.feature_names().to_vec(),
            class_values: ds.class_values().to_vec(),
            margin: cfg.margin,
            objective: objective_template(cfg, &fm.train)?,
            pca: fm.pca.clone(),
            classifier: fm.classifier.clone(),
        };
        let path = dir.join(model_artifact_name(cfg, fold));
        write_json(&path, &artifact)?;
        written.push(path);
        for (class, (dens, kde)) in fm.densities.iter().zip(&fm.kdes).enumerate() {
            let path = dir.join(gmm_artifact_name(cfg, fold, class));
            write_json(&path, dens)?;
            written.push(path);
            let path = dir.join(kde_artifact_name(cfg, fold, class));
            write_json(&path, kde)?;
            written.push(path);
        }
    }
    Ok(written)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Json { path: path.to_path_buf(), source: e })
}

/// Parses `1.5,2,-3` (commas and/or whitespace) or a JSON array.
pub fn parse_vector(text: &str) -> CliResult<DVector<f64>> {
    let t = text.trim();
    let values: Vec<f64> = if t.starts_with('[') {
        serde_json::from_str(t).map_err(|e| CliError::Usage(format!("malformed input vector: {e}")))?
    } else {
        t.split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|_| CliError::Usage(format!("malformed input vector entry '{s}'"))))
            .collect::<CliResult<_>>()?
    };
    if values.is_empty() {
        return Err(CliError::Usage("empty input vector".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Usage("input vector has non-finite entries".into()));
    }
    Ok(DVector::from_vec(values))
}

#[derive(Debug, Clone, Default)]
pub struct ExplainArgs {
    pub model: PathBuf,
    /// Mixture artifact of the target class; absent means baseline mode.
    pub density: Option<PathBuf>,
    pub kde: Option<PathBuf>,
    pub x: DVector<f64>,
    pub target: usize,
    pub baseline: bool,
    /// Overrides the stored threshold.
    pub delta: Option<f64>,
    pub log_delta: Option<f64>,
}

/// One counterfactual, audited.
pub fn cmd_explain(args: &ExplainArgs) -> CliResult<CounterfactualResult> {
    let artifact: ModelArtifact = read_json(&args.model)?;
    let expected = artifact.pca.as_ref().map_or(artifact.classifier.n_features(), AffineMap::input_dim);
    if args.x.len() != expected {
        return Err(CliError::Usage(format!(
            "input vector has {} entries, the model expects {expected}",
            args.x.len()
        )));
    }
    if args.target >= artifact.classifier.n_classes() {
        return Err(CliError::Usage(format!(
            "target {} out of range for {} classes",
            args.target,
            artifact.classifier.n_classes()
        )));
    }
    let density: Option<ClassDensity> = args.density.as_deref().map(read_json).transpose()?;
    let kde: Option<ClassKde> = args.kde.as_deref().map(read_json).transpose()?;
    if let Some(d) = &density {
        if d.gmm.class_id != args.target {
            return Err(CliError::Usage(format!(
                "density artifact is for class {}, target is {}",
                d.gmm.class_id, args.target
            )));
        }
    }
    let opts = EngineOptions { margin: artifact.margin, ..EngineOptions::default() };
    let mut req = CounterfactualRequest::new(args.x.clone(), args.target).with_objective(artifact.objective.clone());
    req.pca = artifact.pca.clone();
    let plausible = density.as_ref().filter(|_| !args.baseline);
    let result = match plausible {
        None => counterfactual_baseline(&req, &artifact.classifier, &opts)?,
        Some(d) => {
            let delta = match (args.delta, args.log_delta) {
                (Some(v), _) => DensityThreshold::new(v)?,
                (None, Some(l)) => DensityThreshold::from_log(l)?,
                (None, None) => d.delta,
            };
            req = req.with_delta(delta);
            counterfactual_plausible(&req, &artifact.classifier, &d.gmm, &opts)?
        }
    };
    if !result.is_found() {
        return Ok(result);
    }
    let a = audit(&result, &req, &artifact.classifier, density.as_ref().map(|d| &d.gmm), kde.as_ref())?;
    Ok(result.with_audit(a))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleDiagnosis {
    pub row: usize,
    pub fold: usize,
    pub label: usize,
    pub target: usize,
    pub sufficient_softmax: bool,
    pub sufficient_tree: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseReport {
    pub samples: Vec<SampleDiagnosis>,
    /// `sample` holds the dataset row; `objective_a` is softmax, `objective_b` tree.
    pub entries: Vec<IndependenceEntry>,
    pub not_sufficient: Vec<usize>,
    pub unexplained: Vec<usize>,
    pub median_abs_difference: Option<f64>,
    pub median_relative_difference: Option<f64>,
}

/// Local sufficiency of softmax and tree models at the given rows, and the
/// spread between their plausible counterfactuals.
pub fn cmd_diagnose(cfg: &ExperimentConfig, rows: &[usize]) -> CliResult<DiagnoseReport> {
    let mut report = DiagnoseReport {
        samples: Vec::new(),
        entries: Vec::new(),
        not_sufficient: Vec::new(),
        unexplained: Vec::new(),
        median_abs_difference: None,
        median_relative_difference: None,
    };
    if rows.is_empty() {
        return Ok(report);
    }
    cfg.validate()?;
    let ds = load_dataset(cfg)?;
    if let Some(bad) = rows.iter().find(|&&r| r >= ds.n_samples()) {
        return Err(CliError::Usage(format!("sample id {bad} out of range for {} rows", ds.n_samples())));
    }
    let plan = fold_plan(cfg, &ds)?;
    let mut by_fold: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &r in rows {
        by_fold.entry(plan.assignments[r]).or_default().push(r);
    }
    let opts = EngineOptions { margin: cfg.margin, ..EngineOptions::default() };
    for (fold, fold_rows) in by_fold {
        let train = ds.subset(&plan.train_indices(fold));
        let (pca, latent, densities, _) = fit_densities(cfg, &train, fold)?;
        let softmax = fit_classifier(cfg, ModelKind::Softmax, &latent, fold)?;
        let tree = fit_classifier(cfg, ModelKind::Tree, &latent, fold)?;
        let metric = objective_template(cfg, &train)?;
        let gmms: Vec<_> = densities.iter().map(|d| d.gmm.clone()).collect();
        let deltas: Vec<_> = densities.iter().map(|d| d.delta).collect();
        let setup = IndependenceSetup {
            models: [&softmax, &tree],
            pca: pca.as_ref(),
            gmms: &gmms,
            deltas: &deltas,
            training: &train,
            neighbors: cfg.neighbors,
            metric: &metric,
            options: opts,
        };
        let mut samples = Vec::new();
        for &row in &fold_rows {
            let x = ds.sample(row);
            let label = ds.labels()[row];
            let target = random_target(cfg.seed, row, label, ds.n_classes());
            let flag = |m: &Classifier| check_local_sufficiency(m, pca.as_ref(), &x, label, &train, cfg.neighbors, &metric);
            report.samples.push(SampleDiagnosis {
                row,
                fold,
                label,
                target,
                sufficient_softmax: flag(&softmax)?,
                sufficient_tree: flag(&tree)?,
            });
            samples.push(IndependenceSample { x, label, target });
        }
        let fold_report = model_independence_experiment(&setup, &samples)?;
        report.entries.extend(fold_report.entries.into_iter().map(|mut e| {
            e.sample = fold_rows[e.sample];
            e
        }));
        report.not_sufficient.extend(fold_report.not_sufficient.iter().map(|&i| fold_rows[i]));
        report.unexplained.extend(fold_report.unexplained.iter().map(|&i| fold_rows[i]));
    }
    let abs: Vec<f64> = report.entries.iter().map(|e| e.abs_difference).collect();
    let rel: Vec<f64> = report.entries.iter().map(|e| e.relative_difference).collect();
    report.median_abs_difference = median(&abs);
    report.median_relative_difference = median(&rel);
    Ok(report)
}
