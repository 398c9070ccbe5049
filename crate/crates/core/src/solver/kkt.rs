use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{ConvexProgram, ObjectiveSpec};

/// Multipliers for the constraints of a [`ConvexProgram`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Duals {
    pub linear: Vec<f64>,
    pub quadratic: Option<f64>,
}

impl Duals {
    pub fn zeros(program: &ConvexProgram) -> Self {
        Self {
            linear: vec![0.0; program.linear.len()],
            quadratic: program.quadratic.as_ref().map(|_| 0.0),
        }
    }
}

/// Breakdown of the optimality conditions at a point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
    pub stationarity: f64,
}

impl KktReport {
    pub fn max(&self) -> f64 {
        self.primal
            .max(self.dual)
            .max(self.complementarity)
            .max(self.stationarity)
    }
}

/// Coordinates within this distance of the anchor use the full L1 subdifferential.
const AT_ANCHOR_TOL: f64 = 1e-6;

/// Largest of primal infeasibility, negative-dual violation, complementary
/// slackness and stationarity (subgradient form for L1 objectives).
pub fn check_kkt(program: &ConvexProgram, point: &DVector<f64>, duals: &Duals) -> f64 {
    kkt_report(program, point, duals).max()
}

pub fn kkt_report(program: &ConvexProgram, point: &DVector<f64>, duals: &Duals) -> KktReport {
    let d = program.dim();
    let mut primal: f64 = 0.0;
    let mut dual: f64 = 0.0;
    let mut comp: f64 = 0.0;
    let mut grad = DVector::zeros(d);
    for (c, &l) in program.linear.iter().zip(&duals.linear) {
        let v = c.value(point);
        primal = primal.max(v);
        if l < -1e-10 {
            dual = dual.max(-l);
        }
        comp = comp.max((l * v).abs());
        grad.axpy(l, &c.a, 1.0);
    }
    if let (Some(q), Some(l)) = (&program.quadratic, duals.quadratic) {
        let v = q.value(point);
        primal = primal.max(v);
        if l < -1e-10 {
            dual = dual.max(-l);
        }
        comp = comp.max((l * v).abs());
        grad.axpy(l, &q.gradient(point), 1.0);
    } else if let Some(q) = &program.quadratic {
        primal = primal.max(q.value(point));
    }
    let stationarity = match &program.objective {
        ObjectiveSpec::WeightedL1 { anchor, weights } => (0..d)
            .map(|i| {
                let dev = point[i] - anchor[i];
                if dev.abs() <= AT_ANCHOR_TOL * (1.0 + anchor[i].abs()) {
                    (grad[i].abs() - weights[i]).max(0.0)
                } else {
                    (weights[i] * dev.signum() + grad[i]).abs()
                }
            })
            .fold(0.0, f64::max),
        ObjectiveSpec::Mahalanobis { anchor, metric } => {
            let r = (metric * (point - anchor)) * 2.0 + grad;
            r.amax()
        }
    };
    KktReport {
        primal,
        dual,
        complementarity: comp,
        stationarity,
    }
}
