//! Class-conditional density estimators and the per-component quadratic constraint.

mod gmm;
mod kde;
mod threshold;

pub use gmm::{
    approx_log_density, component_constraint, fit_gmm, gmm_log_density, select_gmm_components,
    ClassGmm, GaussianComponent, GmmFit, GmmOptions, GmmSelection,
};
pub use kde::{fit_kde, kde_log_density, relative_bandwidth_grid, ClassKde};
pub use threshold::{median_threshold, quantile_threshold, DensityThreshold};

use nalgebra::DMatrix;

/// Mean of the per-feature population variances. Used to scale the covariance floor.
pub(crate) fn mean_feature_variance(points: &DMatrix<f64>) -> f64 {
    let n = points.nrows() as f64;
    if points.ncols() == 0 || points.nrows() == 0 {
        return 0.0;
    }
    points
        .column_iter()
        .map(|c| {
            let m = c.mean();
            c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n
        })
        .sum::<f64>()
        / points.ncols() as f64
}
