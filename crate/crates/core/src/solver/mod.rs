//! Solver for the one program shape the engine produces: a weighted-L1 or
//! Mahalanobis distance minimised over linear inequalities plus at most one
//! convex quadratic inequality.
//!
//! Infeasible starts go through a phase-1 problem (minimise the largest
//! constraint value `s`). Phase 2 is a primal-dual interior-point method
//! with centring factor 10 and a backtracking line search. L1 objectives are
//! handled exactly through their epigraph lift; the lifted Newton system is
//! reduced to the original dimension by eliminating the auxiliary variables.

mod ipm;
mod kkt;
mod oracle;
mod program;

pub use kkt::{check_kkt, kkt_report, Duals, KktReport};
pub use oracle::{brute_force_oracle, OracleResult};
pub use program::{l1_epigraph, ConvexProgram, LiftedProgram, ObjectiveSpec};

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::constraints::{LinearInequality, QuadraticInequality};
use ipm::{primal_dual, DenseModel, EpigraphModel, IpmParams, IpmStatus, NewtonModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub status: SolveStatus,
    #[serde(with = "crate::linalg::serde_vec")]
    pub point: DVector<f64>,
    pub objective_value: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub duals: Duals,
    /// Phase-1 optimum (largest constraint value) when the program is infeasible.
    pub infeasibility: Option<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Surrogate duality gap, relative to `max(1, |objective|)`.
    pub gap_tol: f64,
    /// Dual residual, relative to `max(1, |objective|)`.
    pub feas_tol: f64,
    /// Phase-1 optimum above which the program is declared infeasible.
    pub infeasibility_tol: f64,
    /// Largest KKT residual accepted for an optimal status.
    pub kkt_tol: f64,
    pub max_iter: usize,
    pub mu: f64,
    /// Initial diagonal shift tried when a Newton system is singular.
    pub newton_reg: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            gap_tol: 1e-8,
            feas_tol: 1e-8,
            infeasibility_tol: 1e-7,
            kkt_tol: 1e-6,
            max_iter: 200,
            mu: 10.0,
            newton_reg: 1e-10,
        }
    }
}

impl SolverSettings {
    fn params(&self) -> IpmParams {
        IpmParams {
            gap_tol: self.gap_tol,
            feas_tol: self.feas_tol,
            max_iter: self.max_iter,
            mu: self.mu,
            reg: self.newton_reg,
        }
    }
}

enum PhaseOne {
    /// Strictly feasible point, plus the amount every constraint had to be
    /// relaxed by (zero unless the feasible set has no interior).
    Feasible(DVector<f64>, f64),
    Infeasible(f64),
    Failed,
}

/// Finds a strictly feasible point of `linear` and `quadratic` starting from `start`.
fn phase_one(
    linear: &[LinearInequality],
    quadratic: Option<&QuadraticInequality>,
    start: &DVector<f64>,
    settings: &SolverSettings,
    iterations: &mut usize,
) -> PhaseOne {
    let d = start.len();
    let max_g = |x: &DVector<f64>| {
        let lin = linear.iter().map(|c| c.value(x)).fold(f64::NEG_INFINITY, f64::max);
        quadratic.map_or(lin, |q| lin.max(q.value(x)))
    };
    let mut start = start.clone();
    let mut g0 = max_g(&start);
    if g0 < 0.0 {
        return PhaseOne::Feasible(start, 0.0);
    }
    // a far-away start makes the barrier on the quadratic row crawl; its
    // minimiser is usually a much better phase-1 seed
    if let Some(center) = quadratic.and_then(|q| quadratic_center(q, &start)) {
        let gc = max_g(&center);
        if gc < g0 {
            if gc < 0.0 {
                return PhaseOne::Feasible(center, 0.0);
            }
            start = center;
            g0 = gc;
        }
    }
    let n = d + 1;
    let mut rows: Vec<LinearInequality> = linear
        .iter()
        .map(|c| {
            let mut a = DVector::zeros(n);
            a.rows_mut(0, d).copy_from(&c.a);
            a[d] = -1.0;
            LinearInequality::new(a, c.b)
        })
        .collect();
    let mut floor = DVector::zeros(n);
    floor[d] = -1.0;
    rows.push(LinearInequality::new(floor, 1.0));
    let quad = quadratic.map(|q| {
        let mut m = DMatrix::zeros(n, n);
        m.view_mut((0, 0), (d, d)).copy_from(&q.quad);
        let mut lin = DVector::zeros(n);
        lin.rows_mut(0, d).copy_from(&q.lin);
        lin[d] = -1.0;
        QuadraticInequality::new(m, lin, q.constant)
    });
    let mut cost = DVector::zeros(n);
    cost[d] = 1.0;
    let model = DenseModel {
        cost: Some(&cost),
        quad_obj: None,
        linear: &rows,
        quadratic: quad.as_ref(),
        n,
    };
    let mut z0 = DVector::zeros(n);
    z0.rows_mut(0, d).copy_from(&start);
    z0[d] = g0 + 1.0;
    let out = primal_dual(&model, z0, &settings.params(), &|z, _| {
        max_g(&z.rows(0, d).into_owned()) < -1e-6
    });
    *iterations += out.iterations;
    let x = out.z.rows(0, d).into_owned();
    let gx = max_g(&x);
    if gx < 0.0 {
        return PhaseOne::Feasible(x, 0.0);
    }
    match out.status {
        IpmStatus::Converged | IpmStatus::EarlyStop => {
            let slack = out.z[d];
            if slack > settings.infeasibility_tol {
                PhaseOne::Infeasible(slack)
            } else {
                PhaseOne::Feasible(x, gx + 1e-9)
            }
        }
        // the loop can stall on a flat phase-1 objective once the
        // optimum is pinned down; trust a clearly positive slack
        _ if out.z[d] > 1e3 * settings.infeasibility_tol && out.gap < 1e-3 * out.z[d] => {
            PhaseOne::Infeasible(out.z[d])
        }
        _ => PhaseOne::Failed,
    }
}

/// Minimiser of `x^T Q x + q^T x + eps |x - start|^2`; stays at `start` along
/// directions `Q` ignores.
fn quadratic_center(q: &QuadraticInequality, start: &DVector<f64>) -> Option<DVector<f64>> {
    let d = start.len();
    let scale = (0..d).fold(0.0f64, |m, i| m.max(q.quad[(i, i)])).max(1e-300);
    let eps = 1e-8 * scale;
    let mut h = &q.quad * 2.0;
    for i in 0..d {
        h[(i, i)] += 2.0 * eps;
    }
    let x = h.cholesky()?.solve(&(start * (2.0 * eps) - &q.lin));
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn relaxed(
    linear: &[LinearInequality],
    quadratic: Option<&QuadraticInequality>,
    by: f64,
) -> (Vec<LinearInequality>, Option<QuadraticInequality>) {
    if by == 0.0 {
        return (linear.to_vec(), quadratic.cloned());
    }
    let lin = linear
        .iter()
        .map(|c| LinearInequality::new(c.a.clone(), c.b + by))
        .collect();
    let q = quadratic.map(|q| QuadraticInequality::new(q.quad.clone(), q.lin.clone(), q.constant - by));
    (lin, q)
}

fn finish(
    program: &ConvexProgram,
    point: DVector<f64>,
    duals: Duals,
    converged: bool,
    iterations: usize,
    settings: &SolverSettings,
) -> Solution {
    let kkt = check_kkt(program, &point, &duals);
    let status = if converged && kkt <= settings.kkt_tol {
        SolveStatus::Optimal
    } else {
        if converged {
            log::debug!("interior point converged but KKT residual is {kkt:e}");
        }
        SolveStatus::MaxIter
    };
    Solution {
        status,
        objective_value: program.objective.value(&point),
        point,
        kkt_residual: kkt,
        iterations,
        duals,
        infeasibility: None,
    }
}

/// Solves a [`ConvexProgram`].
pub fn solve(program: &ConvexProgram, settings: &SolverSettings) -> Solution {
    let anchor = program.objective.anchor().clone();
    // the anchor is the unconstrained minimiser of both objectives
    if program.max_violation(&anchor) <= 0.0 {
        return Solution {
            status: SolveStatus::Optimal,
            objective_value: 0.0,
            point: anchor,
            kkt_residual: 0.0,
            iterations: 0,
            duals: Duals::zeros(program),
            infeasibility: None,
        };
    }
    let mut iterations = 0;
    let (x0, relax) = match phase_one(
        &program.linear,
        program.quadratic.as_ref(),
        &anchor,
        settings,
        &mut iterations,
    ) {
        PhaseOne::Feasible(x, r) => (x, r),
        PhaseOne::Infeasible(slack) => {
            return Solution {
                status: SolveStatus::Infeasible,
                objective_value: f64::INFINITY,
                point: anchor,
                kkt_residual: f64::INFINITY,
                iterations,
                duals: Duals::zeros(program),
                infeasibility: Some(slack),
            }
        }
        PhaseOne::Failed => {
            return Solution {
                status: SolveStatus::MaxIter,
                objective_value: f64::INFINITY,
                point: anchor,
                kkt_residual: f64::INFINITY,
                iterations,
                duals: Duals::zeros(program),
                infeasibility: None,
            }
        }
    };
    let (linear, quadratic) = relaxed(&program.linear, program.quadratic.as_ref(), relax);
    let mut params = settings.params();
    let mut best: Option<Solution> = None;
    // tighten the stopping rule when the certificate falls just short
    for _ in 0..3 {
        let (x, duals, converged, its) = phase_two(program, &linear, quadratic.as_ref(), &x0, &params);
        iterations += its;
        let sol = finish(program, x, duals, converged, iterations, settings);
        let done = sol.status == SolveStatus::Optimal || !converged;
        if best.as_ref().is_none_or(|b| sol.kkt_residual < b.kkt_residual) {
            best = Some(sol);
        }
        if done {
            break;
        }
        params.gap_tol *= 1e-2;
        params.feas_tol *= 1e-2;
    }
    let mut sol = best.expect("at least one phase-2 run");
    sol.iterations = iterations;
    sol
}

fn phase_two(
    program: &ConvexProgram,
    linear: &[LinearInequality],
    quadratic: Option<&QuadraticInequality>,
    x0: &DVector<f64>,
    params: &IpmParams,
) -> (DVector<f64>, Duals, bool, usize) {
    let n_lin = linear.len();
    let (x, lambda, converged, iterations) = match &program.objective {
        ObjectiveSpec::WeightedL1 { anchor, weights } => {
            let model = EpigraphModel { anchor, weights, linear, quadratic };
            let d = anchor.len();
            let mut z0 = DVector::zeros(2 * d);
            for i in 0..d {
                let dev = (x0[i] - anchor[i]).abs();
                z0[i] = x0[i];
                z0[d + i] = dev + 0.1 * (1.0 + dev);
            }
            let out = primal_dual(&model, z0, params, &|_, _| false);
            (out.z.rows(0, d).into_owned(), out.lambda, out.status == IpmStatus::Converged, out.iterations)
        }
        ObjectiveSpec::Mahalanobis { anchor, metric } => {
            let model = DenseModel {
                cost: None,
                quad_obj: Some((metric, anchor)),
                linear,
                quadratic,
                n: anchor.len(),
            };
            let out = primal_dual(&model, x0.clone(), params, &|_, _| false);
            (out.z, out.lambda, out.status == IpmStatus::Converged, out.iterations)
        }
    };
    let duals = Duals {
        linear: lambda[..n_lin].to_vec(),
        quadratic: quadratic.map(|_| lambda[n_lin]),
    };
    (x, duals, converged, iterations)
}

/// Result of solving a [`LiftedProgram`] directly.
#[derive(Debug, Clone)]
pub struct LiftedSolution {
    pub status: SolveStatus,
    pub z: DVector<f64>,
    pub objective_value: f64,
    pub iterations: usize,
}

/// Solves the epigraph-lifted LP (plus quadratic) with a dense Newton system.
/// Slower than [`solve`]; exists as an independent route for cross-checks.
pub fn solve_lifted(lifted: &LiftedProgram, settings: &SolverSettings) -> LiftedSolution {
    let n = lifted.n_vars();
    let mut iterations = 0;
    let mut start = DVector::zeros(n);
    start.rows_mut(0, lifted.n_original).copy_from(&lifted.anchor);
    let infeasible = |iterations| LiftedSolution {
        status: SolveStatus::Infeasible,
        z: DVector::zeros(n),
        objective_value: f64::INFINITY,
        iterations,
    };
    let (z0, relax) = match phase_one(&lifted.linear, lifted.quadratic.as_ref(), &start, settings, &mut iterations) {
        PhaseOne::Feasible(z, r) => (z, r),
        PhaseOne::Infeasible(_) => return infeasible(iterations),
        PhaseOne::Failed => {
            return LiftedSolution {
                status: SolveStatus::MaxIter,
                ..infeasible(iterations)
            }
        }
    };
    let (linear, quadratic) = relaxed(&lifted.linear, lifted.quadratic.as_ref(), relax);
    let model = DenseModel {
        cost: Some(&lifted.cost),
        quad_obj: None,
        linear: &linear,
        quadratic: quadratic.as_ref(),
        n,
    };
    let out = primal_dual(&model, z0, &settings.params(), &|_, _| false);
    iterations += out.iterations;
    LiftedSolution {
        status: if out.status == IpmStatus::Converged {
            SolveStatus::Optimal
        } else {
            SolveStatus::MaxIter
        },
        objective_value: model.objective(&out.z),
        z: out.z,
        iterations,
    }
}

/// Plain-text dump of a program, one constraint per line, for cross-checking
/// with external solvers.
pub fn dump_program(program: &ConvexProgram) -> String {
    let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
    let mut out = String::new();
    let d = program.dim();
    let _ = writeln!(out, "dim {d}");
    match &program.objective {
        ObjectiveSpec::WeightedL1 { anchor, weights } => {
            let _ = writeln!(out, "objective weighted-l1");
            let _ = writeln!(out, "anchor {}", join(anchor.as_slice()));
            let _ = writeln!(out, "weights {}", join(weights));
        }
        ObjectiveSpec::Mahalanobis { anchor, metric } => {
            let _ = writeln!(out, "objective mahalanobis");
            let _ = writeln!(out, "anchor {}", join(anchor.as_slice()));
            for i in 0..d {
                let row: Vec<f64> = metric.row(i).iter().copied().collect();
                let _ = writeln!(out, "metric {}", join(&row));
            }
        }
    }
    for c in &program.linear {
        let _ = writeln!(out, "linear {} <= {:?}", join(c.a.as_slice()), c.b);
    }
    if let Some(q) = &program.quadratic {
        for i in 0..d {
            let row: Vec<f64> = q.quad.row(i).iter().copied().collect();
            let _ = writeln!(out, "quad {}", join(&row));
        }
        let _ = writeln!(out, "quad-lin {}", join(q.lin.as_slice()));
        let _ = writeln!(out, "quad-const {:?}", q.constant);
    }
    out
}
