use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::mean_feature_variance;
use crate::datamodel::folds_for_points;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{log_sum_exp, serde_rows};

/// Gaussian-kernel density estimate over one class's training points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassKde {
    #[serde(with = "serde_rows")]
    pub samples: DMatrix<f64>,
    pub bandwidth: f64,
    pub weights: Vec<f64>,
}

impl ClassKde {
    /// Uniform weights `1/n`.
    pub fn new(samples: DMatrix<f64>, bandwidth: f64) -> Result<Self> {
        let n = samples.nrows();
        if n == 0 {
            return Err(Error::Argument("KDE needs at least one sample".into()));
        }
        if !(bandwidth > 0.0) {
            return Err(Error::Argument(format!("bandwidth must be > 0, got {bandwidth}")));
        }
        Ok(Self {
            samples,
            bandwidth,
            weights: vec![1.0 / n as f64; n],
        })
    }

    pub fn dim(&self) -> usize {
        self.samples.ncols()
    }
}

pub fn kde_log_density(kde: &ClassKde, x: &DVector<f64>) -> Result<f64> {
    check_dim(kde.dim(), x.len())?;
    let h2 = kde.bandwidth * kde.bandwidth;
    let norm = -0.5 * kde.dim() as f64 * (2.0 * PI * h2).ln();
    let terms: Vec<f64> = kde
        .samples
        .row_iter()
        .zip(&kde.weights)
        .map(|(row, w)| {
            let sq: f64 = row.iter().zip(x.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            w.ln() + norm - sq / (2.0 * h2)
        })
        .collect();
    Ok(log_sum_exp(&terms))
}

/// Log-spaced bandwidth grid scaled by the root mean feature variance of `points`.
pub fn relative_bandwidth_grid(points: &DMatrix<f64>, lo_exp: f64, hi_exp: f64, count: usize) -> Vec<f64> {
    let scale = mean_feature_variance(points).sqrt();
    let scale = if scale > 0.0 { scale } else { 1.0 };
    if count <= 1 {
        return vec![scale * 10f64.powf(lo_exp)];
    }
    (0..count)
        .map(|i| {
            let e = lo_exp + (hi_exp - lo_exp) * i as f64 / (count - 1) as f64;
            scale * 10f64.powf(e)
        })
        .collect()
}

/// Selects the bandwidth with the best mean held-out log-likelihood over
/// `folds` folds; ties go to the smallest bandwidth.
pub fn fit_kde(points: &DMatrix<f64>, bandwidth_grid: &[f64], folds: usize, seed: u64) -> Result<ClassKde> {
    let n = points.nrows();
    if bandwidth_grid.is_empty() {
        return Err(Error::Argument("empty bandwidth grid".into()));
    }
    if let Some(bad) = bandwidth_grid.iter().find(|&&h| !(h > 0.0)) {
        return Err(Error::Argument(format!("bandwidth must be > 0, got {bad}")));
    }
    if folds < 2 || n < folds {
        return Err(Error::Argument(format!(
            "KDE cross-validation needs 2 <= folds <= n, got folds={folds}, n={n}"
        )));
    }
    let plan = folds_for_points(n, folds, seed)?;
    let splits: Vec<(DMatrix<f64>, DMatrix<f64>)> = (0..folds)
        .map(|f| {
            (
                points.select_rows(plan.train_indices(f).iter()),
                points.select_rows(plan.test_indices(f).iter()),
            )
        })
        .collect();
    let mut sorted = bandwidth_grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut best: Option<(f64, f64)> = None;
    for &h in &sorted {
        let mut score = 0.0;
        for (train, test) in &splits {
            let kde = ClassKde::new(train.clone(), h)?;
            let ll: f64 = test
                .row_iter()
                .map(|r| kde_log_density(&kde, &r.transpose()))
                .sum::<Result<f64>>()?;
            score += ll / test.nrows() as f64;
        }
        score /= folds as f64;
        if best.is_none_or(|(_, b)| score > b) {
            best = Some((h, score));
        }
    }
    let (h, _) = best.expect("grid is non-empty");
    ClassKde::new(points.clone(), h)
}
