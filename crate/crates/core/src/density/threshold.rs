use serde::{Deserialize, Serialize};

use super::{approx_log_density, ClassGmm};
use crate::error::{Error, Result};
use crate::linalg::log_sum_exp;
use nalgebra::DMatrix;

/// Density floor `delta` and its transformed form `-2 log(delta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityThreshold {
    delta: f64,
    delta_prime: f64,
}

impl DensityThreshold {
    pub fn new(delta: f64) -> Result<Self> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::Argument(format!("density threshold must be > 0, got {delta}")));
        }
        Ok(Self {
            delta,
            delta_prime: -2.0 * delta.ln(),
        })
    }

    /// Builds the threshold from `log(delta)`; keeps `delta_prime` finite even
    /// when `delta` underflows.
    pub fn from_log(log_delta: f64) -> Result<Self> {
        if !log_delta.is_finite() {
            return Err(Error::Argument(format!("log threshold must be finite, got {log_delta}")));
        }
        Ok(Self {
            delta: log_delta.exp(),
            delta_prime: -2.0 * log_delta,
        })
    }

    pub fn from_delta_prime(delta_prime: f64) -> Result<Self> {
        Self::from_log(-0.5 * delta_prime)
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn delta_prime(&self) -> f64 {
        self.delta_prime
    }

    pub fn log_delta(&self) -> f64 {
        -0.5 * self.delta_prime
    }
}

/// Median approximate (component-max) density of the given points.
pub fn median_threshold(gmm: &ClassGmm, points: &DMatrix<f64>) -> Result<DensityThreshold> {
    if points.nrows() == 0 {
        return Err(Error::Argument("median threshold needs at least one point".into()));
    }
    let mut logs = points
        .row_iter()
        .map(|r| approx_log_density(gmm, &r.transpose()).map(|(l, _)| l))
        .collect::<Result<Vec<_>>>()?;
    median_of_log_densities(&mut logs)
}

/// Threshold at quantile `q` of the approximate log-densities of `points`,
/// interpolating linearly in log space. `q = 0.5` gives [`median_threshold`].
pub fn quantile_threshold(gmm: &ClassGmm, points: &DMatrix<f64>, q: f64) -> Result<DensityThreshold> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Argument(format!("quantile {q} outside (0, 1)")));
    }
    if q == 0.5 {
        return median_threshold(gmm, points);
    }
    if points.nrows() == 0 {
        return Err(Error::Argument("quantile threshold needs at least one point".into()));
    }
    let mut logs = points
        .row_iter()
        .map(|r| approx_log_density(gmm, &r.transpose()).map(|(l, _)| l))
        .collect::<Result<Vec<_>>>()?;
    logs.sort_by(f64::total_cmp);
    let h = (logs.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let log_delta = logs[lo] + (h - lo as f64) * (logs[hi] - logs[lo]);
    DensityThreshold::from_log(log_delta)
}

pub(crate) fn median_of_log_densities(logs: &mut [f64]) -> Result<DensityThreshold> {
    logs.sort_by(f64::total_cmp);
    let n = logs.len();
    let (lo, hi) = if n % 2 == 1 {
        (logs[n / 2], logs[n / 2])
    } else {
        (logs[n / 2 - 1], logs[n / 2])
    };
    let delta = if n % 2 == 1 {
        lo.exp()
    } else {
        0.5 * (lo.exp() + hi.exp())
    };
    if delta > 0.0 && delta.is_finite() {
        DensityThreshold::new(delta)
    } else {
        let log_delta = if n % 2 == 1 {
            lo
        } else {
            log_sum_exp(&[lo, hi]) - 2f64.ln()
        };
        DensityThreshold::from_log(log_delta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn median_of(values: &[f64]) -> DensityThreshold {
        let mut logs: Vec<f64> = values.iter().map(|v| v.ln()).collect();
        median_of_log_densities(&mut logs).unwrap()
    }

    #[test]
    fn odd_count_median() {
        assert!((median_of(&[3.0, 1.0, 2.0]).delta() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn even_count_takes_midpoint() {
        assert!((median_of(&[1.0, 3.0]).delta() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn unit_delta_has_zero_prime() {
        let t = DensityThreshold::new(1.0).unwrap();
        assert_eq!(t.delta_prime(), 0.0);
        let t = DensityThreshold::new(0.37).unwrap();
        assert_eq!(t.delta_prime(), -2.0 * 0.37f64.ln());
    }

    #[test]
    fn underflowing_median_stays_finite() {
        let mut logs = vec![-900.0, -800.0, -1000.0];
        let t = median_of_log_densities(&mut logs).unwrap();
        assert_eq!(t.delta_prime(), 1800.0);
    }

    #[test]
    fn rejects_non_positive() {
        assert!(DensityThreshold::new(0.0).is_err());
        assert!(DensityThreshold::new(-1.0).is_err());
    }

    #[test]
    fn quantiles_interpolate_log_densities() {
        use crate::density::GaussianComponent;
        use nalgebra::{DMatrix, DVector};
        let comp = GaussianComponent::new(1.0, DVector::zeros(1), DMatrix::identity(1, 1)).unwrap();
        let gmm = ClassGmm::new(0, vec![comp]).unwrap();
        let pts = DMatrix::from_column_slice(5, 1, &[0.0, 1.0, 2.0, 3.0, 4.0]);
        let logs: Vec<f64> = (0..5).map(|i| -0.5 * (i * i) as f64 - 0.5 * std::f64::consts::TAU.ln()).collect();
        // sorted ascending: x=4,3,2,1,0; q=0.25 sits exactly on the second value
        let t = quantile_threshold(&gmm, &pts, 0.25).unwrap();
        assert!((t.log_delta() - logs[3]).abs() < 1e-12);
        let t = quantile_threshold(&gmm, &pts, 0.125).unwrap();
        assert!((t.log_delta() - 0.5 * (logs[4] + logs[3])).abs() < 1e-12);
        assert_eq!(quantile_threshold(&gmm, &pts, 0.5).unwrap(), median_threshold(&gmm, &pts).unwrap());
        assert!(quantile_threshold(&gmm, &pts, 1.0).is_err());
    }
}
