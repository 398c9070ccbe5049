//! Fixtures shared by the benchmarks.

use nalgebra::{DMatrix, DVector};
use plausicf_core::classifiers::{Classifier, SoftmaxModel};
use plausicf_core::density::{ClassGmm, DensityThreshold, GaussianComponent};
use plausicf_core::solver::{ConvexProgram, ObjectiveSpec};
use plausicf_core::{LinearInequality, QuadraticInequality};

/// Two-class linear model separating `x_0 < 0` from `x_0 > 0` in `d` dimensions.
pub fn boundary_model(d: usize) -> Classifier {
    let mut weights = DMatrix::zeros(2, d);
    weights[(0, 0)] = -1.0;
    weights[(1, 0)] = 1.0;
    Classifier::Softmax(SoftmaxModel {
        weights,
        biases: DVector::zeros(2),
    })
}

/// `m` unit-covariance components along the positive first axis, all in class 1.
pub fn target_mixture(d: usize, m: usize) -> ClassGmm {
    let comps = (0..m)
        .map(|j| {
            let mut mean = DVector::zeros(d);
            mean[0] = 3.0 + j as f64;
            if d > 1 {
                mean[1] = j as f64 - (m as f64 - 1.0) / 2.0;
            }
            GaussianComponent::new(1.0 / m as f64, mean, DMatrix::identity(d, d)).unwrap()
        })
        .collect();
    ClassGmm::new(1, comps).unwrap()
}

/// Threshold at Mahalanobis radius 1 of a single unit component.
pub fn radius_one_threshold(d: usize, m: usize) -> DensityThreshold {
    let log = -(m as f64).ln() - 0.5 * (1.0 + d as f64 * std::f64::consts::TAU.ln());
    DensityThreshold::from_log(log).unwrap()
}

pub fn anchor(d: usize) -> DVector<f64> {
    let mut x = DVector::zeros(d);
    x[0] = -3.0;
    x
}

/// L1 projection onto a unit ball intersected with a halfspace.
pub fn ball_program(d: usize) -> ConvexProgram {
    let mut a = DVector::zeros(d);
    a[0] = -1.0;
    let mut centre = DVector::zeros(d);
    centre[0] = 3.0;
    let quad = QuadraticInequality::new(DMatrix::identity(d, d), &centre * -2.0, centre.norm_squared() - 1.0);
    ConvexProgram::new(ObjectiveSpec::l1(anchor(d)), vec![LinearInequality::new(a, 0.0)], Some(quad)).unwrap()
}
