use serde::{Deserialize, Serialize};

use super::{component_slack, CounterfactualRequest, CounterfactualResult};
use crate::classifiers::Classifier;
use crate::density::{approx_log_density, kde_log_density, ClassGmm, ClassKde};
use crate::error::{check_dim, Error, Result};

/// Allowed excess of the quadratic form over `delta'`.
pub const DENSITY_TOL: f64 = 1e-6;

const OBJECTIVE_TOL: f64 = 1e-6;

/// Independent re-check of a found counterfactual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlausibilityAudit {
    pub predicted_class: usize,
    pub prediction_ok: bool,
    pub objective_distance: f64,
    pub objective_ok: bool,
    pub approx_log_density: Option<f64>,
    /// `delta'` minus the selected component's quadratic form.
    pub component_slack: Option<f64>,
    /// `None` when the request has no density floor.
    pub density_ok: Option<bool>,
    pub kde_log_density: Option<f64>,
    pub passed: bool,
}

/// Recomputes prediction, distance and densities at `result.point`.
///
/// `gmm` and `kde` must live in model space. The density check runs only when
/// the request has a threshold, and then needs `gmm`.
pub fn audit(
    result: &CounterfactualResult,
    req: &CounterfactualRequest,
    model: &Classifier,
    gmm: Option<&ClassGmm>,
    kde: Option<&ClassKde>,
) -> Result<PlausibilityAudit> {
    let (Some(point), Some(reported)) = (&result.point, result.objective_value) else {
        return Err(Error::Argument("only found counterfactuals can be audited".into()));
    };
    check_dim(req.x.len(), point.len())?;
    let z = req.to_model_space(point)?;
    let predicted_class = model.predict(&z)?;
    let objective_distance = req.objective.value(point);
    let objective_ok = (objective_distance - reported).abs() <= OBJECTIVE_TOL * reported.abs().max(1.0);

    let approx = gmm.map(|g| approx_log_density(g, &z)).transpose()?;
    let (component_slack, density_ok) = match &req.delta {
        None => (None, None),
        Some(delta) => {
            let g = gmm.ok_or_else(|| Error::Argument("density audit needs the mixture".into()))?;
            let j = result.component_index.unwrap_or(approx.map_or(0, |a| a.1));
            if j >= g.n_components() {
                return Err(Error::Argument(format!("component {j} out of range")));
            }
            let slack = component_slack(g, j, &z, delta);
            (Some(slack), Some(slack >= -DENSITY_TOL))
        }
    };
    let kde_log_density = kde.map(|k| kde_log_density(k, &z)).transpose()?;
    let prediction_ok = predicted_class == req.target;
    Ok(PlausibilityAudit {
        predicted_class,
        prediction_ok,
        objective_distance,
        objective_ok,
        approx_log_density: approx.map(|a| a.0),
        component_slack,
        density_ok,
        kde_log_density,
        passed: prediction_ok && objective_ok && density_ok.unwrap_or(true),
    })
}
