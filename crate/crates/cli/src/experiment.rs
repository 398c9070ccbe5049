//! The full cross-validated comparison of unconstrained and density-constrained
//! counterfactuals.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use plausicf_core::datamodel::LabeledDataset;
use plausicf_core::engine::{
    audit, counterfactual_baseline, counterfactual_plausible, median, CounterfactualRequest,
    CounterfactualResult, EngineOptions,
};
use plausicf_core::solver::ObjectiveSpec;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::pgm::write_pgm;
use crate::pipeline::{derive_seed, fit_fold, fold_plan, load_dataset, objective_template, FoldModels, TAG_TARGET};

/// Fixed column order of the CSV table.
pub const TABLE_HEADER: &str = "scope,model,dataset,n_samples,n_explained,density_without,distance_without,\
density_with,distance_with,infeasible_without,infeasible_with,audit_failures,errors";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutcomeStatus {
    Found,
    Infeasible,
    Error,
}

/// What the table needs from one counterfactual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub status: OutcomeStatus,
    /// Manhattan distance to the query.
    pub distance: Option<f64>,
    pub objective_value: Option<f64>,
    pub kde_log_density: Option<f64>,
    pub approx_log_density: Option<f64>,
    pub component_index: Option<usize>,
    pub audit_passed: bool,
    #[serde(skip)]
    pub point: Option<DVector<f64>>,
}

impl Outcome {
    fn error() -> Self {
        Self {
            status: OutcomeStatus::Error,
            distance: None,
            objective_value: None,
            kde_log_density: None,
            approx_log_density: None,
            component_index: None,
            audit_passed: false,
            point: None,
        }
    }

    fn from_result(res: &CounterfactualResult, x: &DVector<f64>) -> Self {
        let Some(p) = &res.point else {
            return Self { status: OutcomeStatus::Infeasible, ..Self::error() };
        };
        Self {
            status: OutcomeStatus::Found,
            distance: Some((p - x).abs().sum()),
            objective_value: res.objective_value,
            kde_log_density: res.kde_log_density,
            approx_log_density: res.approx_log_density,
            component_index: res.component_index,
            audit_passed: res.audit.as_ref().is_some_and(|a| a.passed),
            point: Some(p.clone()),
        }
    }

    pub fn usable(&self) -> bool {
        self.status == OutcomeStatus::Found && self.audit_passed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub fold: usize,
    /// Row of the sample in the dataset file (0-based, header excluded).
    pub row: usize,
    pub label: usize,
    pub target: usize,
    pub baseline: Outcome,
    pub plausible: Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    /// `pooled` or `fold<k>`.
    pub scope: String,
    pub model: String,
    pub dataset: String,
    pub n_samples: usize,
    /// Samples where both counterfactuals were found and passed their audit.
    pub n_explained: usize,
    pub density_without: Option<f64>,
    pub distance_without: Option<f64>,
    pub density_with: Option<f64>,
    pub distance_with: Option<f64>,
    pub infeasible_without: usize,
    pub infeasible_with: usize,
    pub audit_failures: usize,
    pub errors: usize,
}

impl TableRow {
    fn from_records(scope: String, model: &str, dataset: &str, records: &[&SampleRecord]) -> Self {
        let explained: Vec<_> = records.iter().filter(|r| r.baseline.usable() && r.plausible.usable()).collect();
        let col = |f: &dyn Fn(&SampleRecord) -> Option<f64>| {
            let v: Vec<f64> = explained.iter().filter_map(|r| f(r)).collect();
            median(&v)
        };
        let count = |f: &dyn Fn(&Outcome) -> bool| {
            records.iter().map(|r| usize::from(f(&r.baseline)) + usize::from(f(&r.plausible))).sum()
        };
        Self {
            scope,
            model: model.into(),
            dataset: dataset.into(),
            n_samples: records.len(),
            n_explained: explained.len(),
            density_without: col(&|r| r.baseline.kde_log_density),
            distance_without: col(&|r| r.baseline.distance),
            density_with: col(&|r| r.plausible.kde_log_density),
            distance_with: col(&|r| r.plausible.distance),
            infeasible_without: records.iter().filter(|r| r.baseline.status == OutcomeStatus::Infeasible).count(),
            infeasible_with: records.iter().filter(|r| r.plausible.status == OutcomeStatus::Infeasible).count(),
            audit_failures: count(&|o| o.status == OutcomeStatus::Found && !o.audit_passed),
            errors: count(&|o| o.status == OutcomeStatus::Error),
        }
    }

    /// Density strictly higher and distance no smaller with the constraint.
    pub fn has_expected_ordering(&self) -> bool {
        match (self.density_without, self.density_with, self.distance_without, self.distance_with) {
            (Some(dw), Some(dc), Some(lw), Some(lc)) => dc > dw && lc >= lw,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<TableRow>,
}

impl ResultTable {
    pub fn pooled(&self) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.scope == "pooled")
    }

    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        let mut out = String::from(TABLE_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.scope,
                r.model,
                r.dataset,
                r.n_samples,
                r.n_explained,
                cell(r.density_without),
                cell(r.distance_without),
                cell(r.density_with),
                cell(r.distance_with),
                r.infeasible_without,
                r.infeasible_with,
                r.audit_failures,
                r.errors
            );
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub table: ResultTable,
    pub samples: Vec<SampleRecord>,
}

/// Uniform draw from the classes other than `label`.
pub fn random_target(seed: u64, row: usize, label: usize, n_classes: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[TAG_TARGET, row as u64]));
    let k = rng.random_range(0..n_classes - 1);
    if k >= label {
        k + 1
    } else {
        k
    }
}

/// Baseline and plausible counterfactual of `x` towards `target`, audited.
pub fn explain_pair(
    fm: &FoldModels,
    objective: &ObjectiveSpec,
    x: &DVector<f64>,
    target: usize,
    opts: &EngineOptions,
) -> CliResult<(CounterfactualResult, CounterfactualResult)> {
    let dens = &fm.densities[target];
    let mut req = CounterfactualRequest::new(x.clone(), target).with_objective(objective.clone());
    req.pca = fm.pca.clone();
    let base = counterfactual_baseline(&req, &fm.classifier, opts)?;
    let base = attach_audit(base, &req, fm, target)?;
    let req = req.with_delta(dens.delta);
    let plaus = counterfactual_plausible(&req, &fm.classifier, &dens.gmm, opts)?;
    let plaus = attach_audit(plaus, &req, fm, target)?;
    Ok((base, plaus))
}

fn attach_audit(
    res: CounterfactualResult,
    req: &CounterfactualRequest,
    fm: &FoldModels,
    target: usize,
) -> CliResult<CounterfactualResult> {
    if !res.is_found() {
        return Ok(res);
    }
    let a = audit(&res, req, &fm.classifier, Some(&fm.densities[target].gmm), Some(&fm.kdes[target]))?;
    if !a.passed {
        log::warn!("audit failed: {a:?}");
    }
    Ok(res.with_audit(a))
}

fn explain_row(
    cfg: &ExperimentConfig,
    ds: &LabeledDataset,
    fm: &FoldModels,
    objective: &ObjectiveSpec,
    row: usize,
) -> SampleRecord {
    let x = ds.sample(row);
    let label = ds.labels()[row];
    let target = random_target(cfg.seed, row, label, ds.n_classes());
    let opts = EngineOptions { margin: cfg.margin, ..EngineOptions::default() };
    let (baseline, plausible) = match explain_pair(fm, objective, &x, target, &opts) {
        Ok((b, p)) => (Outcome::from_result(&b, &x), Outcome::from_result(&p, &x)),
        Err(e) => {
            log::warn!("fold {} row {row}: {e}", fm.fold);
            (Outcome::error(), Outcome::error())
        }
    };
    SampleRecord { fold: fm.fold, row, label, target, baseline, plausible }
}

/// Runs every fold and assembles per-fold and pooled rows.
pub fn run_experiment(cfg: &ExperimentConfig) -> CliResult<ExperimentOutcome> {
    cfg.validate()?;
    let ds = load_dataset(cfg)?;
    if ds.n_classes() < 2 {
        return Err(CliError::Usage("dataset has a single class".into()));
    }
    let plan = fold_plan(cfg, &ds)?;
    let mut samples = Vec::new();
    for fold in 0..cfg.cv_folds {
        let fm = fit_fold(cfg, &ds, &plan, fold)?;
        let objective = objective_template(cfg, &fm.train)?;
        let mut rows = plan.test_indices(fold);
        if let Some(cap) = cfg.max_test_samples {
            rows.truncate(cap);
        }
        let records: Vec<SampleRecord> =
            rows.par_iter().map(|&row| explain_row(cfg, &ds, &fm, &objective, row)).collect();
        log::info!("fold {fold}: {} samples explained", records.len());
        samples.extend(records);
    }
    let model = cfg.model.name();
    let dataset = cfg.dataset_name();
    let mut rows = Vec::new();
    for fold in 0..cfg.cv_folds {
        let recs: Vec<&SampleRecord> = samples.iter().filter(|r| r.fold == fold).collect();
        rows.push(TableRow::from_records(format!("fold{fold}"), model, &dataset, &recs));
    }
    let all: Vec<&SampleRecord> = samples.iter().collect();
    rows.push(TableRow::from_records("pooled".into(), model, &dataset, &all));
    Ok(ExperimentOutcome { table: ResultTable { rows }, samples })
}

/// Stem shared by every file of one run.
pub fn run_stem(cfg: &ExperimentConfig) -> String {
    format!("{}_{}_seed{}", cfg.dataset_name(), cfg.model.name(), cfg.seed)
}

/// Writes the CSV and JSON tables, per-sample records and image dumps;
/// returns the paths written.
pub fn write_outputs(cfg: &ExperimentConfig, outcome: &ExperimentOutcome) -> CliResult<Vec<PathBuf>> {
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let stem = run_stem(cfg);
    let mut written = Vec::new();
    let mut put = |name: String, bytes: &[u8]| -> CliResult<()> {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        written.push(path);
        Ok(())
    };
    put(format!("{stem}_table.csv"), outcome.table.to_csv().as_bytes())?;
    put(format!("{stem}_table.json"), to_json(&outcome.table)?.as_bytes())?;
    put(format!("{stem}_samples.json"), to_json(&outcome.samples)?.as_bytes())?;
    if let Some(shape) = cfg.image_shape {
        let img_dir = dir.join("images");
        fs::create_dir_all(&img_dir).map_err(|e| CliError::io(&img_dir, e))?;
        let ds = load_dataset(cfg)?;
        for r in &outcome.samples {
            let original = ds.sample(r.row);
            let views = [
                ("original", Some(&original)),
                ("baseline", r.baseline.point.as_ref()),
                ("plausible", r.plausible.point.as_ref()),
            ];
            for (kind, point) in views {
                let Some(p) = point else { continue };
                let path = img_dir.join(format!("{stem}_fold{}_row{}_{kind}.pgm", r.fold, r.row));
                write_pgm(&path, p.as_slice(), shape, cfg.image_scale)?;
                written.push(path);
            }
        }
    }
    Ok(written)
}

pub(crate) fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    serde_json::to_string_pretty(value).map_err(|e| CliError::Json { path: PathBuf::from("<output>"), source: e })
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = to_json(value)?;
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}
