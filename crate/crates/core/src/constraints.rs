//! Constraint primitives shared by the classifiers, the density model and the solver.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::{serde_rows, serde_vec};

/// `a^T x <= b`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearInequality {
    #[serde(with = "serde_vec")]
    pub a: DVector<f64>,
    pub b: f64,
}

impl LinearInequality {
    pub fn new(a: DVector<f64>, b: f64) -> Self {
        Self { a, b }
    }

    /// Signed violation `a^T x - b`; non-positive when satisfied.
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        self.a.dot(x) - self.b
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }
}

/// `x^T Q x + q^T x + r <= 0` with `Q` positive semi-definite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticInequality {
    #[serde(with = "serde_rows")]
    pub quad: DMatrix<f64>,
    #[serde(with = "serde_vec")]
    pub lin: DVector<f64>,
    pub constant: f64,
}

impl QuadraticInequality {
    pub fn new(quad: DMatrix<f64>, lin: DVector<f64>, constant: f64) -> Self {
        Self {
            quad,
            lin,
            constant,
        }
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.quad * x)) + self.lin.dot(x) + self.constant
    }

    /// `2 Q x + q`
    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        (&self.quad * x) * 2.0 + &self.lin
    }

    pub fn dim(&self) -> usize {
        self.lin.len()
    }
}

/// A conjunction of linear inequalities plus at most one convex quadratic inequality.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeasibleRegion {
    pub linear: Vec<LinearInequality>,
    pub quadratic: Option<QuadraticInequality>,
}

impl FeasibleRegion {
    pub fn new(linear: Vec<LinearInequality>, quadratic: Option<QuadraticInequality>) -> Self {
        Self { linear, quadratic }
    }

    /// Largest constraint value at `x` (`-inf` for the whole space).
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let lin = self
            .linear
            .iter()
            .map(|c| c.value(x))
            .fold(f64::NEG_INFINITY, f64::max);
        match &self.quadratic {
            Some(q) => lin.max(q.value(x)),
            None => lin,
        }
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        self.max_violation(x) <= tol
    }

    /// Dimension implied by the constraints, if there are any.
    pub fn dim(&self) -> Option<usize> {
        self.linear
            .first()
            .map(LinearInequality::dim)
            .or_else(|| self.quadratic.as_ref().map(QuadraticInequality::dim))
    }
}
