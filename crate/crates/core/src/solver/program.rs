use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::constraints::{FeasibleRegion, LinearInequality, QuadraticInequality};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{jacobi_eigen, serde_rows, serde_vec};

/// Distance from the anchor that the counterfactual search minimises.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ObjectiveSpec {
    /// `sum_i w_i |x_i - anchor_i|`
    WeightedL1 {
        #[serde(with = "serde_vec")]
        anchor: DVector<f64>,
        weights: Vec<f64>,
    },
    /// `(x - anchor)^T M (x - anchor)`
    Mahalanobis {
        #[serde(with = "serde_vec")]
        anchor: DVector<f64>,
        #[serde(with = "serde_rows")]
        metric: DMatrix<f64>,
    },
}

impl ObjectiveSpec {
    /// Unit-weight Manhattan distance.
    pub fn l1(anchor: DVector<f64>) -> Self {
        let weights = vec![1.0; anchor.len()];
        Self::WeightedL1 { anchor, weights }
    }

    pub fn weighted_l1(anchor: DVector<f64>, weights: Vec<f64>) -> Result<Self> {
        check_dim(anchor.len(), weights.len())?;
        if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::Argument("L1 weights must be positive and finite".into()));
        }
        Ok(Self::WeightedL1 { anchor, weights })
    }

    /// Squared Euclidean distance.
    pub fn euclidean(anchor: DVector<f64>) -> Self {
        let d = anchor.len();
        Self::Mahalanobis {
            anchor,
            metric: DMatrix::identity(d, d),
        }
    }

    pub fn mahalanobis(anchor: DVector<f64>, metric: DMatrix<f64>) -> Result<Self> {
        let d = anchor.len();
        if metric.nrows() != d || metric.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: metric.nrows(),
            });
        }
        if (&metric - metric.transpose()).amax() > 1e-10 * metric.amax().max(1.0) {
            return Err(Error::Argument("metric matrix must be symmetric".into()));
        }
        let min_eig = jacobi_eigen(&metric).eigenvalues.min();
        if min_eig < -1e-10 {
            return Err(Error::Argument(format!(
                "metric matrix must be positive semi-definite (min eigenvalue {min_eig})"
            )));
        }
        Ok(Self::Mahalanobis { anchor, metric })
    }

    pub fn anchor(&self) -> &DVector<f64> {
        match self {
            Self::WeightedL1 { anchor, .. } | Self::Mahalanobis { anchor, .. } => anchor,
        }
    }

    pub fn dim(&self) -> usize {
        self.anchor().len()
    }

    /// Same objective around a different anchor.
    pub fn with_anchor(&self, anchor: DVector<f64>) -> Self {
        match self {
            Self::WeightedL1 { weights, .. } => Self::WeightedL1 {
                anchor,
                weights: weights.clone(),
            },
            Self::Mahalanobis { metric, .. } => Self::Mahalanobis {
                anchor,
                metric: metric.clone(),
            },
        }
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        self.distance(x, self.anchor())
    }

    /// Objective evaluated between two arbitrary points.
    pub fn distance(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        match self {
            Self::WeightedL1 { weights, .. } => x
                .iter()
                .zip(y.iter())
                .zip(weights)
                .map(|((a, b), w)| w * (a - b).abs())
                .sum(),
            Self::Mahalanobis { metric, .. } => {
                let diff = x - y;
                diff.dot(&(metric * &diff))
            }
        }
    }
}

/// Minimise an [`ObjectiveSpec`] subject to linear inequalities and at most one
/// convex quadratic inequality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexProgram {
    pub objective: ObjectiveSpec,
    pub linear: Vec<LinearInequality>,
    pub quadratic: Option<QuadraticInequality>,
}

impl ConvexProgram {
    /// Checks dimensions and that the quadratic matrix is positive semi-definite.
    pub fn new(
        objective: ObjectiveSpec,
        linear: Vec<LinearInequality>,
        quadratic: Option<QuadraticInequality>,
    ) -> Result<Self> {
        let d = objective.dim();
        for c in &linear {
            check_dim(d, c.dim())?;
            if !c.b.is_finite() || c.a.iter().any(|v| !v.is_finite()) {
                return Err(Error::Argument("non-finite linear constraint".into()));
            }
        }
        if let Some(q) = &quadratic {
            check_dim(d, q.dim())?;
            check_dim(d, q.quad.nrows())?;
            check_dim(d, q.quad.ncols())?;
            if !is_psd(&q.quad) {
                return Err(Error::Argument("quadratic constraint matrix is not PSD".into()));
            }
        }
        Ok(Self {
            objective,
            linear,
            quadratic,
        })
    }

    pub fn from_region(objective: ObjectiveSpec, region: FeasibleRegion) -> Result<Self> {
        Self::new(objective, region.linear, region.quadratic)
    }

    pub fn dim(&self) -> usize {
        self.objective.dim()
    }

    pub fn region(&self) -> FeasibleRegion {
        FeasibleRegion::new(self.linear.clone(), self.quadratic.clone())
    }

    /// Largest constraint value (`-inf` when unconstrained).
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let lin = self
            .linear
            .iter()
            .map(|c| c.value(x))
            .fold(f64::NEG_INFINITY, f64::max);
        self.quadratic
            .as_ref()
            .map_or(lin, |q| lin.max(q.value(x)))
    }

    /// The same program with one more linear constraint.
    pub fn with_linear(&self, extra: LinearInequality) -> Result<Self> {
        let mut linear = self.linear.clone();
        linear.push(extra);
        Self::new(self.objective.clone(), linear, self.quadratic.clone())
    }
}

fn is_psd(m: &DMatrix<f64>) -> bool {
    let n = m.nrows();
    if (m - m.transpose()).amax() > 1e-9 * m.amax().max(1.0) {
        return false;
    }
    let scale = (0..n).fold(0.0f64, |a, i| a.max(m[(i, i)].abs())).max(1e-300);
    let mut shifted = m.clone();
    for i in 0..n {
        shifted[(i, i)] += 1e-10 * scale.max(1.0);
    }
    shifted.cholesky().is_some()
}

/// L1 program rewritten over `z = (x, t)` with a linear objective
/// `sum_i w_i t_i` and the extra rows `+-(x_i - anchor_i) <= t_i`.
///
/// Constraint order: the original linear rows, then for every coordinate the
/// `+` row followed by the `-` row. The quadratic constraint (if any) acts on
/// the `x` block only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftedProgram {
    pub n_original: usize,
    #[serde(with = "serde_vec")]
    pub cost: DVector<f64>,
    pub linear: Vec<LinearInequality>,
    pub quadratic: Option<QuadraticInequality>,
    #[serde(with = "serde_vec")]
    pub anchor: DVector<f64>,
}

impl LiftedProgram {
    pub fn n_vars(&self) -> usize {
        self.cost.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        self.cost.dot(z)
    }

    pub fn x_part(&self, z: &DVector<f64>) -> DVector<f64> {
        z.rows(0, self.n_original).into_owned()
    }
}

/// Epigraph lift of a weighted-L1 program.
pub fn l1_epigraph(program: &ConvexProgram) -> Result<LiftedProgram> {
    let ObjectiveSpec::WeightedL1 { anchor, weights } = &program.objective else {
        return Err(Error::Argument("epigraph lift needs a weighted-L1 objective".into()));
    };
    let d = anchor.len();
    let n = 2 * d;
    let mut cost = DVector::zeros(n);
    for i in 0..d {
        cost[d + i] = weights[i];
    }
    let pad = |a: &DVector<f64>| {
        let mut z = DVector::zeros(n);
        z.rows_mut(0, d).copy_from(a);
        z
    };
    let mut linear: Vec<LinearInequality> = program
        .linear
        .iter()
        .map(|c| LinearInequality::new(pad(&c.a), c.b))
        .collect();
    for i in 0..d {
        let mut plus = DVector::zeros(n);
        plus[i] = 1.0;
        plus[d + i] = -1.0;
        linear.push(LinearInequality::new(plus, anchor[i]));
        let mut minus = DVector::zeros(n);
        minus[i] = -1.0;
        minus[d + i] = -1.0;
        linear.push(LinearInequality::new(minus, -anchor[i]));
    }
    let quadratic = program.quadratic.as_ref().map(|q| {
        let mut quad = DMatrix::zeros(n, n);
        quad.view_mut((0, 0), (d, d)).copy_from(&q.quad);
        QuadraticInequality::new(quad, pad(&q.lin), q.constant)
    });
    Ok(LiftedProgram {
        n_original: d,
        cost,
        linear,
        quadratic,
        anchor: anchor.clone(),
    })
}
