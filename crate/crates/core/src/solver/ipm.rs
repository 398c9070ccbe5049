//! Primal-dual interior-point iterations for smooth convex inequality
//! constrained problems, with two Newton-system back ends: a dense one and
//! one specialised to the L1 epigraph structure.

use nalgebra::{DMatrix, DVector};

use crate::constraints::{LinearInequality, QuadraticInequality};
use crate::linalg::regularized_cholesky;

/// What the interior-point loop needs from a problem.
pub(crate) trait NewtonModel {
    fn n_vars(&self) -> usize;
    fn n_cons(&self) -> usize;
    fn objective(&self, z: &DVector<f64>) -> f64;
    fn constraints(&self, z: &DVector<f64>, out: &mut [f64]);
    /// `grad f0(z) + sum_i lambda_i grad f_i(z)`
    fn dual_residual(&self, z: &DVector<f64>, lambda: &[f64]) -> DVector<f64>;
    /// `grad f_i(z)^T dz` for every constraint.
    fn directional(&self, z: &DVector<f64>, dz: &DVector<f64>, out: &mut [f64]);
    /// Solves `(hess f0 + sum lambda_i hess f_i + sum w_i grad f_i grad f_i^T) dz = rhs`.
    fn newton_direction(
        &self,
        z: &DVector<f64>,
        lambda: &[f64],
        weights: &[f64],
        rhs: &DVector<f64>,
        reg: f64,
    ) -> Option<DVector<f64>>;
}

/// `c^T z + (z - z0)^T P (z - z0)` subject to linear rows and at most one
/// quadratic constraint. Constraint order: linear rows, then the quadratic.
pub(crate) struct DenseModel<'a> {
    pub cost: Option<&'a DVector<f64>>,
    pub quad_obj: Option<(&'a DMatrix<f64>, &'a DVector<f64>)>,
    pub linear: &'a [LinearInequality],
    pub quadratic: Option<&'a QuadraticInequality>,
    pub n: usize,
}

impl NewtonModel for DenseModel<'_> {
    fn n_vars(&self) -> usize {
        self.n
    }

    fn n_cons(&self) -> usize {
        self.linear.len() + usize::from(self.quadratic.is_some())
    }

    fn objective(&self, z: &DVector<f64>) -> f64 {
        let mut v = self.cost.map_or(0.0, |c| c.dot(z));
        if let Some((p, z0)) = self.quad_obj {
            let diff = z - z0;
            v += diff.dot(&(p * &diff));
        }
        v
    }

    fn constraints(&self, z: &DVector<f64>, out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(self.linear) {
            *o = c.value(z);
        }
        if let Some(q) = self.quadratic {
            out[self.linear.len()] = q.value(z);
        }
    }

    fn dual_residual(&self, z: &DVector<f64>, lambda: &[f64]) -> DVector<f64> {
        let mut r = match self.cost {
            Some(c) => c.clone(),
            None => DVector::zeros(self.n),
        };
        if let Some((p, z0)) = self.quad_obj {
            r += (p * (z - z0)) * 2.0;
        }
        for (c, l) in self.linear.iter().zip(lambda) {
            r.axpy(*l, &c.a, 1.0);
        }
        if let Some(q) = self.quadratic {
            r.axpy(lambda[self.linear.len()], &q.gradient(z), 1.0);
        }
        r
    }

    fn directional(&self, z: &DVector<f64>, dz: &DVector<f64>, out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(self.linear) {
            *o = c.a.dot(dz);
        }
        if let Some(q) = self.quadratic {
            out[self.linear.len()] = q.gradient(z).dot(dz);
        }
    }

    fn newton_direction(
        &self,
        z: &DVector<f64>,
        lambda: &[f64],
        weights: &[f64],
        rhs: &DVector<f64>,
        reg: f64,
    ) -> Option<DVector<f64>> {
        let mut h = DMatrix::zeros(self.n, self.n);
        if let Some((p, _)) = self.quad_obj {
            h += p * 2.0;
        }
        for (c, w) in self.linear.iter().zip(weights) {
            h.ger(*w, &c.a, &c.a, 1.0);
        }
        if let Some(q) = self.quadratic {
            let k = self.linear.len();
            h += &q.quad * (2.0 * lambda[k]);
            let g = q.gradient(z);
            h.ger(weights[k], &g, &g, 1.0);
        }
        let ch = regularized_cholesky(&h, reg)?;
        Some(ch.solve(rhs))
    }
}

/// Weighted L1 distance to `anchor` lifted to `z = (x, t)`. Constraint order:
/// general linear rows on `x`, the quadratic (if any), then `d` rows
/// `x_i - a_i - t_i <= 0` and `d` rows `-(x_i - a_i) - t_i <= 0`.
pub(crate) struct EpigraphModel<'a> {
    pub anchor: &'a DVector<f64>,
    pub weights: &'a [f64],
    pub linear: &'a [LinearInequality],
    pub quadratic: Option<&'a QuadraticInequality>,
}

impl EpigraphModel<'_> {
    fn d(&self) -> usize {
        self.anchor.len()
    }

    fn n_general(&self) -> usize {
        self.linear.len() + usize::from(self.quadratic.is_some())
    }
}

impl NewtonModel for EpigraphModel<'_> {
    fn n_vars(&self) -> usize {
        2 * self.d()
    }

    fn n_cons(&self) -> usize {
        self.n_general() + 2 * self.d()
    }

    fn objective(&self, z: &DVector<f64>) -> f64 {
        let d = self.d();
        (0..d).map(|i| self.weights[i] * z[d + i]).sum()
    }

    fn constraints(&self, z: &DVector<f64>, out: &mut [f64]) {
        let d = self.d();
        let x = z.rows(0, d).into_owned();
        for (o, c) in out.iter_mut().zip(self.linear) {
            *o = c.value(&x);
        }
        if let Some(q) = self.quadratic {
            out[self.linear.len()] = q.value(&x);
        }
        let g = self.n_general();
        for i in 0..d {
            let dev = z[i] - self.anchor[i];
            out[g + i] = dev - z[d + i];
            out[g + d + i] = -dev - z[d + i];
        }
    }

    fn dual_residual(&self, z: &DVector<f64>, lambda: &[f64]) -> DVector<f64> {
        let d = self.d();
        let x = z.rows(0, d).into_owned();
        let mut rx = DVector::zeros(d);
        for (c, l) in self.linear.iter().zip(lambda) {
            rx.axpy(*l, &c.a, 1.0);
        }
        if let Some(q) = self.quadratic {
            rx.axpy(lambda[self.linear.len()], &q.gradient(&x), 1.0);
        }
        let g = self.n_general();
        let mut r = DVector::zeros(2 * d);
        for i in 0..d {
            let (lp, lm) = (lambda[g + i], lambda[g + d + i]);
            r[i] = rx[i] + lp - lm;
            r[d + i] = self.weights[i] - lp - lm;
        }
        r
    }

    fn directional(&self, z: &DVector<f64>, dz: &DVector<f64>, out: &mut [f64]) {
        let d = self.d();
        let dx = dz.rows(0, d).into_owned();
        for (o, c) in out.iter_mut().zip(self.linear) {
            *o = c.a.dot(&dx);
        }
        if let Some(q) = self.quadratic {
            let x = z.rows(0, d).into_owned();
            out[self.linear.len()] = q.gradient(&x).dot(&dx);
        }
        let g = self.n_general();
        for i in 0..d {
            out[g + i] = dz[i] - dz[d + i];
            out[g + d + i] = -dz[i] - dz[d + i];
        }
    }

    fn newton_direction(
        &self,
        z: &DVector<f64>,
        lambda: &[f64],
        weights: &[f64],
        rhs: &DVector<f64>,
        reg: f64,
    ) -> Option<DVector<f64>> {
        let d = self.d();
        let mut h = DMatrix::zeros(d, d);
        for (c, w) in self.linear.iter().zip(weights) {
            h.ger(*w, &c.a, &c.a, 1.0);
        }
        if let Some(q) = self.quadratic {
            let k = self.linear.len();
            let x = z.rows(0, d).into_owned();
            h += &q.quad * (2.0 * lambda[k]);
            let g = q.gradient(&x);
            h.ger(weights[k], &g, &g, 1.0);
        }
        // Each (x_i, t_i) pair couples only through its two epigraph rows:
        //   [[wp + wm, wm - wp], [wm - wp, wp + wm]]
        // so t is eliminated with a diagonal Schur complement.
        let g = self.n_general();
        let mut rx = rhs.rows(0, d).into_owned();
        let mut coupling = vec![0.0; d];
        let mut diag_t = vec![0.0; d];
        for i in 0..d {
            let (wp, wm) = (weights[g + i], weights[g + d + i]);
            let dt = wp + wm;
            let c = wm - wp;
            h[(i, i)] += dt - c * c / dt;
            rx[i] -= c * rhs[d + i] / dt;
            coupling[i] = c;
            diag_t[i] = dt;
        }
        let ch = regularized_cholesky(&h, reg)?;
        let dx = ch.solve(&rx);
        let mut out = DVector::zeros(2 * d);
        for i in 0..d {
            out[i] = dx[i];
            out[d + i] = (rhs[d + i] - coupling[i] * dx[i]) / diag_t[i];
        }
        Some(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum IpmStatus {
    Converged,
    EarlyStop,
    MaxIter,
    Breakdown,
}

#[derive(Debug, Clone)]
pub(crate) struct IpmOutcome {
    pub z: DVector<f64>,
    pub lambda: Vec<f64>,
    pub iterations: usize,
    pub status: IpmStatus,
    pub gap: f64,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct IpmParams {
    pub gap_tol: f64,
    pub feas_tol: f64,
    pub max_iter: usize,
    pub mu: f64,
    pub reg: f64,
}

fn residual_norm(r_dual: &DVector<f64>, f: &[f64], lambda: &[f64], inv_t: f64) -> f64 {
    let cent: f64 = f
        .iter()
        .zip(lambda)
        .map(|(fi, li)| {
            let r = -li * fi - inv_t;
            r * r
        })
        .sum();
    (r_dual.norm_squared() + cent).sqrt()
}

/// Runs primal-dual iterations from a strictly feasible `z0`. `early_stop`
/// is consulted before every iteration with the current point and
/// constraint values.
pub(crate) fn primal_dual<M: NewtonModel>(
    model: &M,
    z0: DVector<f64>,
    params: &IpmParams,
    early_stop: &dyn Fn(&DVector<f64>, &[f64]) -> bool,
) -> IpmOutcome {
    debug_assert_eq!(z0.len(), model.n_vars());
    let m = model.n_cons();
    let mut z = z0;
    let mut f = vec![0.0; m];
    model.constraints(&z, &mut f);
    debug_assert!(f.iter().all(|v| *v < 0.0), "interior-point start must be strictly feasible");
    let scale = model.objective(&z).abs().max(1.0) / m.max(1) as f64;
    let mut lambda: Vec<f64> = f.iter().map(|fi| scale / -fi).collect();
    let mut trial_f = vec![0.0; m];
    let mut g = vec![0.0; m];
    let mut gap = f64::INFINITY;

    for iter in 0..params.max_iter {
        if early_stop(&z, &f) {
            return IpmOutcome { z, lambda, iterations: iter, status: IpmStatus::EarlyStop, gap };
        }
        gap = -f.iter().zip(&lambda).map(|(a, b)| a * b).sum::<f64>();
        let r_dual = model.dual_residual(&z, &lambda);
        let obj_scale = model.objective(&z).abs().max(1.0);
        if r_dual.amax() <= params.feas_tol * obj_scale.max(1.0) && gap <= params.gap_tol * obj_scale {
            return IpmOutcome { z, lambda, iterations: iter, status: IpmStatus::Converged, gap };
        }
        if m == 0 {
            return IpmOutcome { z, lambda, iterations: iter, status: IpmStatus::Breakdown, gap };
        }
        let t = params.mu * m as f64 / gap;
        let inv_t = 1.0 / t;
        let centering: Vec<f64> = f.iter().map(|fi| inv_t / -fi).collect();
        let rhs = -model.dual_residual(&z, &centering);
        let weights: Vec<f64> = f.iter().zip(&lambda).map(|(fi, li)| li / -fi).collect();
        let Some(dz) = model.newton_direction(&z, &lambda, &weights, &rhs, params.reg) else {
            return IpmOutcome { z, lambda, iterations: iter, status: IpmStatus::Breakdown, gap };
        };
        model.directional(&z, &dz, &mut g);
        let dl: Vec<f64> = (0..m)
            .map(|i| (inv_t + lambda[i] * f[i] + lambda[i] * g[i]) / -f[i])
            .collect();
        let mut s_max: f64 = 1.0;
        for i in 0..m {
            if dl[i] < 0.0 {
                s_max = s_max.min(-lambda[i] / dl[i]);
            }
        }
        let mut s = 0.99 * s_max;
        let r0 = residual_norm(&r_dual, &f, &lambda, inv_t);
        let mut accepted = false;
        for _ in 0..80 {
            let zt = &z + &dz * s;
            model.constraints(&zt, &mut trial_f);
            if trial_f.iter().any(|v| *v >= 0.0 || !v.is_finite()) {
                s *= 0.5;
                continue;
            }
            let lt: Vec<f64> = lambda.iter().zip(&dl).map(|(l, d)| l + s * d).collect();
            let rt = residual_norm(&model.dual_residual(&zt, &lt), &trial_f, &lt, inv_t);
            if rt <= (1.0 - 0.01 * s) * r0 {
                z = zt;
                lambda = lt;
                std::mem::swap(&mut f, &mut trial_f);
                accepted = true;
                break;
            }
            s *= 0.5;
        }
        if !accepted {
            return IpmOutcome { z, lambda, iterations: iter, status: IpmStatus::Breakdown, gap };
        }
    }
    gap = -f.iter().zip(&lambda).map(|(a, b)| a * b).sum::<f64>();
    IpmOutcome { z, lambda, iterations: params.max_iter, status: IpmStatus::MaxIter, gap }
}
