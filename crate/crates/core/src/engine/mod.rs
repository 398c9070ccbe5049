//! Closest counterfactual search, with and without a density floor.
//!
//! Every (mixture component, classifier region) pair gives one convex
//! program. All are solved and the smallest optimum wins; exact ties go to the
//! lowest component, then the lowest region.

mod audit;
mod diagnostics;

pub use audit::{audit, PlausibilityAudit, DENSITY_TOL};
pub use diagnostics::{
    check_local_sufficiency, model_independence_experiment, IndependenceEntry, IndependenceReport,
    IndependenceSample, IndependenceSetup,
};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::classifiers::{Classifier, RegionProvenance};
use crate::constraints::{FeasibleRegion, QuadraticInequality};
use crate::datamodel::{pca_compose_constraints, AffineMap};
use crate::density::{approx_log_density, component_constraint, ClassGmm, DensityThreshold};
use crate::error::{Error, Result};
use crate::linalg::{serde_opt_vec, serde_vec};
use crate::solver::{solve, ConvexProgram, ObjectiveSpec, SolveStatus, SolverSettings};

/// Default shrink applied to classifier regions.
pub const DEFAULT_MARGIN: f64 = 1e-4;

/// Relative gap below which two subproblem optima count as tied.
const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualRequest {
    /// Query point in the original feature space.
    #[serde(with = "serde_vec")]
    pub x: DVector<f64>,
    pub target: usize,
    /// Distance to minimise; anchored at `x`.
    pub objective: ObjectiveSpec,
    /// Density floor; `None` asks for the unconstrained counterfactual.
    #[serde(default)]
    pub delta: Option<DensityThreshold>,
    /// Map into the space the classifier and densities live in.
    #[serde(default)]
    pub pca: Option<AffineMap>,
}

impl CounterfactualRequest {
    /// L1 request without density floor or projection.
    pub fn new(x: DVector<f64>, target: usize) -> Self {
        let objective = ObjectiveSpec::l1(x.clone());
        Self { x, target, objective, delta: None, pca: None }
    }

    pub fn with_objective(mut self, objective: ObjectiveSpec) -> Self {
        self.objective = objective.with_anchor(self.x.clone());
        self
    }

    pub fn with_delta(mut self, delta: DensityThreshold) -> Self {
        self.delta = Some(delta);
        self
    }

    pub fn with_pca(mut self, pca: AffineMap) -> Self {
        self.pca = Some(pca);
        self
    }

    pub fn without_delta(&self) -> Self {
        Self { delta: None, ..self.clone() }
    }

    /// Coordinates of `x` in model space.
    pub fn to_model_space(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.pca {
            Some(map) => map.transform(x),
            None => Ok(x.clone()),
        }
    }

    fn validate(&self, model: &Classifier) -> Result<()> {
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("query point has non-finite entries".into()));
        }
        if self.target >= model.n_classes() {
            return Err(Error::Argument(format!(
                "target class {} out of range for {} classes",
                self.target,
                model.n_classes()
            )));
        }
        if self.objective.dim() != self.x.len() || self.objective.anchor() != &self.x {
            return Err(Error::Argument("objective must be anchored at the query point".into()));
        }
        let model_dim = match &self.pca {
            Some(map) => {
                if map.input_dim() != self.x.len() {
                    return Err(Error::DimensionMismatch { expected: map.input_dim(), got: self.x.len() });
                }
                map.output_dim()
            }
            None => self.x.len(),
        };
        if model_dim != model.n_features() {
            return Err(Error::DimensionMismatch { expected: model.n_features(), got: model_dim });
        }
        Ok(())
    }

    fn compose(&self, latent: FeasibleRegion) -> Result<FeasibleRegion> {
        match &self.pca {
            Some(map) => pca_compose_constraints(map, &latent),
            None => Ok(latent),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CounterfactualStatus {
    Found,
    Infeasible,
}

/// Outcome tally over the enumerated subproblems.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubproblemCounts {
    pub total: usize,
    pub optimal: usize,
    pub infeasible: usize,
    /// Solver stopped without certifying optimality.
    pub failed: usize,
    /// Optimal but the point failed the prediction or density re-check.
    pub rejected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualResult {
    pub status: CounterfactualStatus,
    /// Counterfactual in the original feature space.
    #[serde(with = "serde_opt_vec")]
    pub point: Option<DVector<f64>>,
    pub objective_value: Option<f64>,
    pub component_index: Option<usize>,
    pub region_provenance: Option<RegionProvenance>,
    /// Component-max mixture log-density at the point (model space).
    pub approx_log_density: Option<f64>,
    pub kde_log_density: Option<f64>,
    pub subproblems: SubproblemCounts,
    #[serde(default)]
    pub audit: Option<PlausibilityAudit>,
}

impl CounterfactualResult {
    fn infeasible(subproblems: SubproblemCounts) -> Self {
        Self {
            status: CounterfactualStatus::Infeasible,
            point: None,
            objective_value: None,
            component_index: None,
            region_provenance: None,
            approx_log_density: None,
            kde_log_density: None,
            subproblems,
            audit: None,
        }
    }

    pub fn is_found(&self) -> bool {
        self.status == CounterfactualStatus::Found
    }

    /// Attaches an audit and copies its recomputed densities.
    pub fn with_audit(mut self, audit: PlausibilityAudit) -> Self {
        if audit.approx_log_density.is_some() {
            self.approx_log_density = audit.approx_log_density;
        }
        if audit.kde_log_density.is_some() {
            self.kde_log_density = audit.kde_log_density;
        }
        self.audit = Some(audit);
        self
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EngineOptions {
    pub margin: f64,
    pub solver: SolverSettings,
}

impl Default for EngineOptions {
    fn default() -> Self {
        Self { margin: DEFAULT_MARGIN, solver: SolverSettings::default() }
    }
}

/// `delta' - ((z - mu)^T P (z - mu) + c_j)`; non-negative inside the component's
/// density floor.
pub fn component_slack(gmm: &ClassGmm, component: usize, z: &DVector<f64>, delta: &DensityThreshold) -> f64 {
    let c = &gmm.components[component];
    delta.delta_prime() - (c.mahalanobis_sq(z) + c.constraint_constant())
}

/// Closest point the model assigns to `req.target`, with no density floor.
pub fn counterfactual_baseline(
    req: &CounterfactualRequest,
    model: &Classifier,
    opts: &EngineOptions,
) -> Result<CounterfactualResult> {
    if req.delta.is_some() {
        return Err(Error::Argument("baseline request must not carry a density threshold".into()));
    }
    enumerate(req, model, None, opts)
}

/// Closest point the model assigns to `req.target` whose component-max density
/// under `gmm` is at least `req.delta`.
pub fn counterfactual_plausible(
    req: &CounterfactualRequest,
    model: &Classifier,
    gmm: &ClassGmm,
    opts: &EngineOptions,
) -> Result<CounterfactualResult> {
    if req.delta.is_none() {
        return Err(Error::Argument("plausible request needs a density threshold".into()));
    }
    if gmm.class_id != req.target {
        return Err(Error::Argument(format!(
            "mixture belongs to class {} but the target is {}",
            gmm.class_id, req.target
        )));
    }
    if gmm.dim() != model.n_features() {
        return Err(Error::DimensionMismatch { expected: model.n_features(), got: gmm.dim() });
    }
    enumerate(req, model, Some(gmm), opts)
}

struct Best {
    point: DVector<f64>,
    value: f64,
    component: Option<usize>,
    provenance: RegionProvenance,
}

fn enumerate(
    req: &CounterfactualRequest,
    model: &Classifier,
    gmm: Option<&ClassGmm>,
    opts: &EngineOptions,
) -> Result<CounterfactualResult> {
    req.validate(model)?;
    let regions = model
        .target_regions(req.target, opts.margin)
        .into_iter()
        .map(|r| Ok((r.provenance, req.compose(r.to_feasible_region())?.linear)))
        .collect::<Result<Vec<_>>>()?;

    let quads: Vec<(Option<usize>, Option<QuadraticInequality>)> = match (gmm, &req.delta) {
        (Some(g), Some(delta)) => g
            .components
            .iter()
            .enumerate()
            .map(|(j, c)| {
                let latent = FeasibleRegion::new(vec![], Some(component_constraint(c, delta)));
                Ok((Some(j), req.compose(latent)?.quadratic))
            })
            .collect::<Result<_>>()?,
        _ => vec![(None, None)],
    };

    let mut counts = SubproblemCounts::default();
    let mut best: Option<Best> = None;
    for (component, quad) in &quads {
        for (provenance, linear) in &regions {
            counts.total += 1;
            let program = ConvexProgram::new(req.objective.clone(), linear.clone(), quad.clone())?;
            let sol = solve(&program, &opts.solver);
            match sol.status {
                SolveStatus::Infeasible => {
                    counts.infeasible += 1;
                    continue;
                }
                SolveStatus::MaxIter => {
                    counts.failed += 1;
                    log::debug!("subproblem {component:?}/{provenance:?} did not converge");
                    continue;
                }
                SolveStatus::Optimal => counts.optimal += 1,
            }
            let z = req.to_model_space(&sol.point)?;
            let class_ok = model.predict(&z)? == req.target;
            let density_ok = match (gmm, &req.delta, component) {
                (Some(g), Some(d), Some(j)) => component_slack(g, *j, &z, d) >= -DENSITY_TOL,
                _ => true,
            };
            if !(class_ok && density_ok) {
                counts.rejected += 1;
                log::warn!("subproblem {component:?}/{provenance:?} optimum failed its re-check");
                continue;
            }
            let better = best.as_ref().is_none_or(|b| {
                sol.objective_value < b.value - TIE_TOL * b.value.abs().max(1.0)
            });
            if better {
                best = Some(Best {
                    point: sol.point,
                    value: sol.objective_value,
                    component: *component,
                    provenance: *provenance,
                });
            }
        }
    }

    let Some(best) = best else {
        return Ok(CounterfactualResult::infeasible(counts));
    };
    let approx = match gmm {
        Some(g) => Some(approx_log_density(g, &req.to_model_space(&best.point)?)?.0),
        None => None,
    };
    Ok(CounterfactualResult {
        status: CounterfactualStatus::Found,
        point: Some(best.point),
        objective_value: Some(best.value),
        component_index: best.component,
        region_provenance: Some(best.provenance),
        approx_log_density: approx,
        kde_log_density: None,
        subproblems: counts,
        audit: None,
    })
}

/// Median, averaging the middle pair; `None` when empty.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

#[cfg(test)]
mod tests;
