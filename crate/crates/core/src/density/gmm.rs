use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{mean_feature_variance, DensityThreshold};
use crate::constraints::QuadraticInequality;
use crate::datamodel::FoldPlan;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{log_sum_exp, quad_form, serde_rows, serde_vec, symmetrize};

/// One weighted Gaussian with cached precision, log-determinant and the
/// constant of its quadratic density constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ComponentRecord", into = "ComponentRecord")]
pub struct GaussianComponent {
    weight: f64,
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    precision: DMatrix<f64>,
    log_det_precision: f64,
    constraint_constant: f64,
}

#[derive(Serialize, Deserialize)]
struct ComponentRecord {
    weight: f64,
    #[serde(with = "serde_vec")]
    mean: DVector<f64>,
    /// Row-major.
    #[serde(with = "serde_rows")]
    covariance: DMatrix<f64>,
}

impl TryFrom<ComponentRecord> for GaussianComponent {
    type Error = Error;

    fn try_from(r: ComponentRecord) -> Result<Self> {
        GaussianComponent::new(r.weight, r.mean, r.covariance)
    }
}

impl From<GaussianComponent> for ComponentRecord {
    fn from(c: GaussianComponent) -> Self {
        ComponentRecord {
            weight: c.weight,
            mean: c.mean,
            covariance: c.covariance,
        }
    }
}

impl GaussianComponent {
    pub fn new(weight: f64, mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if !(weight > 0.0 && weight <= 1.0 + 1e-12) {
            return Err(Error::Argument(format!("component weight must be in (0, 1], got {weight}")));
        }
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: covariance.nrows(),
            });
        }
        let chol = covariance
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("covariance is not positive definite".into()))?;
        let log_det_cov = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let mut precision = chol.inverse();
        symmetrize(&mut precision);
        let log_det_precision = -log_det_cov;
        let constraint_constant =
            -2.0 * weight.ln() + d as f64 * (2.0 * PI).ln() - log_det_precision;
        Ok(Self {
            weight,
            mean,
            covariance,
            precision,
            log_det_precision,
            constraint_constant,
        })
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn log_det_precision(&self) -> f64 {
        self.log_det_precision
    }

    /// `c_j = -2 log(pi_j) + d log(2 pi) - log det(Sigma_j^-1)`
    pub fn constraint_constant(&self) -> f64 {
        self.constraint_constant
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Squared Mahalanobis distance to the mean.
    pub fn mahalanobis_sq(&self, x: &DVector<f64>) -> f64 {
        quad_form(&self.precision, x, &self.mean)
    }

    /// `log(pi_j N(x | mu_j, Sigma_j))`
    pub fn weighted_log_density(&self, x: &DVector<f64>) -> f64 {
        -0.5 * (self.mahalanobis_sq(x) + self.constraint_constant)
    }
}

/// Mixture of Gaussians fitted to one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassGmm {
    pub class_id: usize,
    pub components: Vec<GaussianComponent>,
}

impl ClassGmm {
    pub fn new(class_id: usize, components: Vec<GaussianComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Argument("a mixture needs at least one component".into()));
        }
        let d = components[0].dim();
        for c in &components {
            check_dim(d, c.dim())?;
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Argument(format!("mixture weights sum to {total}, not 1")));
        }
        Ok(Self {
            class_id,
            components,
        })
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }
}

pub fn gmm_log_density(gmm: &ClassGmm, x: &DVector<f64>) -> Result<f64> {
    check_dim(gmm.dim(), x.len())?;
    let terms: Vec<f64> = gmm
        .components
        .iter()
        .map(|c| c.weighted_log_density(x))
        .collect();
    Ok(log_sum_exp(&terms))
}

/// Component-wise maximum of the weighted densities, in log space, with the
/// index of the maximising component (lowest index on ties).
pub fn approx_log_density(gmm: &ClassGmm, x: &DVector<f64>) -> Result<(f64, usize)> {
    check_dim(gmm.dim(), x.len())?;
    let mut best = (f64::NEG_INFINITY, 0);
    for (j, c) in gmm.components.iter().enumerate() {
        let l = c.weighted_log_density(x);
        if l > best.0 {
            best = (l, j);
        }
    }
    Ok(best)
}

/// `(x - mu)^T P (x - mu) + c_j <= delta'` expanded to `x^T Q x + q^T x + r <= 0`.
pub fn component_constraint(comp: &GaussianComponent, thr: &DensityThreshold) -> QuadraticInequality {
    let p = comp.precision.clone();
    let p_mu = &p * &comp.mean;
    let lin = &p_mu * -2.0;
    let constant = comp.mean.dot(&p_mu) + comp.constraint_constant - thr.delta_prime();
    QuadraticInequality::new(p, lin, constant)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GmmOptions {
    pub components: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
    pub restarts: usize,
}

impl Default for GmmOptions {
    fn default() -> Self {
        Self {
            components: 1,
            seed: 0,
            max_iter: 100,
            tol: 1e-6,
            restarts: 5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GmmFit {
    pub gmm: ClassGmm,
    /// Total log-likelihood before each M-step of the winning restart.
    pub log_likelihood_trace: Vec<f64>,
    pub log_likelihood: f64,
    pub converged: bool,
    pub degenerate: bool,
    /// Restart that produced `gmm`.
    pub restart: usize,
}

/// EM for a full-covariance mixture. Best of `restarts` seeded runs by final
/// log-likelihood; ties go to the lowest restart index.
pub fn fit_gmm(points: &DMatrix<f64>, opts: &GmmOptions) -> Result<GmmFit> {
    let (n, d) = points.shape();
    let m = opts.components;
    if m == 0 {
        return Err(Error::Argument("component count must be >= 1".into()));
    }
    if n < m {
        return Err(Error::Argument(format!(
            "{n} points cannot support {m} mixture components"
        )));
    }
    let mean_var = mean_feature_variance(points);
    if mean_var == 0.0 {
        log::warn!("all {n} points are identical; returning a degenerate single-point fit");
        let comp = GaussianComponent::new(
            1.0,
            points.row(0).transpose(),
            DMatrix::identity(d, d) * 1e-6,
        )?;
        let gmm = ClassGmm::new(0, vec![comp])?;
        let ll = total_log_likelihood(&gmm, points);
        return Ok(GmmFit {
            gmm,
            log_likelihood_trace: vec![ll],
            log_likelihood: ll,
            converged: true,
            degenerate: true,
            restart: 0,
        });
    }
    let floor = 1e-6 * mean_var;
    let mut best: Option<GmmFit> = None;
    for restart in 0..opts.restarts.max(1) {
        let seed = opts.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(restart as u64);
        let fit = match em_run(points, m, floor, seed, opts.max_iter, opts.tol) {
            Ok(mut f) => {
                f.restart = restart;
                f
            }
            Err(e) => {
                log::debug!("EM restart {restart} failed: {e}");
                continue;
            }
        };
        if best
            .as_ref()
            .is_none_or(|b| fit.log_likelihood > b.log_likelihood)
        {
            best = Some(fit);
        }
    }
    best.ok_or_else(|| Error::Numerical("every EM restart failed".into()))
}

fn total_log_likelihood(gmm: &ClassGmm, points: &DMatrix<f64>) -> f64 {
    points
        .row_iter()
        .map(|r| {
            let x = r.transpose();
            let terms: Vec<f64> = gmm.components.iter().map(|c| c.weighted_log_density(&x)).collect();
            log_sum_exp(&terms)
        })
        .sum()
}

fn global_covariance(points: &DMatrix<f64>) -> DMatrix<f64> {
    let n = points.nrows() as f64;
    let mean = DVector::from_iterator(points.ncols(), points.column_iter().map(|c| c.mean()));
    let mut centered = points.clone();
    for mut r in centered.row_iter_mut() {
        r -= mean.transpose();
    }
    let mut cov = centered.transpose() * centered / n;
    symmetrize(&mut cov);
    cov
}

/// k-means++ style seeding of the initial means.
fn seed_means(points: &DMatrix<f64>, m: usize, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    let n = points.nrows();
    let mut means = vec![points.row(rng.random_range(0..n)).transpose()];
    let mut dist: Vec<f64> = (0..n)
        .map(|i| (points.row(i).transpose() - &means[0]).norm_squared())
        .collect();
    while means.len() < m {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &w) in dist.iter().enumerate() {
                if u < w {
                    chosen = i;
                    break;
                }
                u -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = points.row(pick).transpose();
        for (i, di) in dist.iter_mut().enumerate() {
            *di = di.min((points.row(i).transpose() - &c).norm_squared());
        }
        means.push(c);
    }
    means
}

struct EmState {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covs: Vec<DMatrix<f64>>,
}

impl EmState {
    fn to_gmm(&self) -> Result<ClassGmm> {
        let kept: Vec<usize> = (0..self.weights.len()).filter(|&j| self.weights[j] > 0.0).collect();
        let total: f64 = kept.iter().map(|&j| self.weights[j]).sum();
        let comps = kept
            .iter()
            .map(|&j| GaussianComponent::new(self.weights[j] / total, self.means[j].clone(), self.covs[j].clone()))
            .collect::<Result<Vec<_>>>()?;
        ClassGmm::new(0, comps)
    }
}

fn em_run(
    points: &DMatrix<f64>,
    m: usize,
    floor: f64,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<GmmFit> {
    let (n, d) = points.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init_cov = global_covariance(points) + DMatrix::identity(d, d) * floor;
    let mut state = EmState {
        weights: vec![1.0 / m as f64; m],
        means: seed_means(points, m, &mut rng),
        covs: vec![init_cov; m],
    };
    let rows: Vec<DVector<f64>> = points.row_iter().map(|r| r.transpose()).collect();
    let mut trace = Vec::new();
    let mut resp = DMatrix::<f64>::zeros(n, m);
    let mut converged = false;

    for _ in 0..max_iter.max(1) {
        // E-step
        let gmm = state.to_gmm()?;
        let index: Vec<usize> = (0..m).filter(|&j| state.weights[j] > 0.0).collect();
        let mut ll = 0.0;
        let mut terms = vec![0.0; gmm.components.len()];
        for (i, x) in rows.iter().enumerate() {
            for (t, c) in terms.iter_mut().zip(&gmm.components) {
                *t = c.weighted_log_density(x);
            }
            let lse = log_sum_exp(&terms);
            ll += lse;
            resp.row_mut(i).fill(0.0);
            for (k, &j) in index.iter().enumerate() {
                resp[(i, j)] = (terms[k] - lse).exp();
            }
        }
        if !ll.is_finite() {
            return Err(Error::Numerical("non-finite log-likelihood in EM".into()));
        }
        let improvement = trace.last().map(|&prev: &f64| ll - prev);
        trace.push(ll);
        if improvement.is_some_and(|imp| imp < tol) {
            converged = true;
            break;
        }
        // M-step
        for j in 0..m {
            let nj: f64 = resp.column(j).sum();
            if nj <= 1e-12 * n as f64 {
                state.weights[j] = 0.0;
                continue;
            }
            let mut mean = DVector::zeros(d);
            for (i, x) in rows.iter().enumerate() {
                mean.axpy(resp[(i, j)], x, 1.0);
            }
            mean /= nj;
            let mut cov = DMatrix::zeros(d, d);
            for (i, x) in rows.iter().enumerate() {
                let diff = x - &mean;
                cov.ger(resp[(i, j)], &diff, &diff, 1.0);
            }
            cov /= nj;
            for k in 0..d {
                cov[(k, k)] += floor;
            }
            symmetrize(&mut cov);
            state.weights[j] = nj / n as f64;
            state.means[j] = mean;
            state.covs[j] = cov;
        }
    }
    let gmm = state.to_gmm()?;
    let log_likelihood = if converged {
        *trace.last().unwrap()
    } else {
        let ll = total_log_likelihood(&gmm, points);
        trace.push(ll);
        ll
    };
    Ok(GmmFit {
        gmm,
        log_likelihood_trace: trace,
        log_likelihood,
        converged,
        degenerate: false,
        restart: 0,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GmmSelection {
    pub components: usize,
    /// Mean held-out log-likelihood per candidate, `None` where the candidate
    /// could not be fitted.
    pub scores: Vec<(usize, Option<f64>)>,
}

/// Picks the component count by mean held-out log-likelihood over `folds`
/// folds (ties go to the smaller count), then refits on all points.
pub fn select_gmm_components(
    points: &DMatrix<f64>,
    candidates: &[usize],
    folds: usize,
    opts: &GmmOptions,
) -> Result<(GmmFit, GmmSelection)> {
    let n = points.nrows();
    if candidates.is_empty() {
        return Err(Error::Argument("empty component grid".into()));
    }
    let plan = crate::datamodel::folds_for_points(n, folds, opts.seed)?;
    let mut scores = Vec::new();
    let mut best: Option<(usize, f64)> = None;
    for &m in candidates {
        let score = cv_score(points, &plan, m, opts);
        scores.push((m, score));
        if let Some(s) = score {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((m, s));
            }
        }
    }
    let components = best.map_or(1, |(m, _)| m);
    let fit = fit_gmm(points, &GmmOptions { components, ..opts.clone() })?;
    Ok((fit, GmmSelection { components, scores }))
}

fn cv_score(points: &DMatrix<f64>, plan: &FoldPlan, m: usize, opts: &GmmOptions) -> Option<f64> {
    let mut total = 0.0;
    for f in 0..plan.k {
        let train = points.select_rows(plan.train_indices(f).iter());
        let test = points.select_rows(plan.test_indices(f).iter());
        if train.nrows() < m {
            return None;
        }
        let fit = fit_gmm(&train, &GmmOptions { components: m, ..opts.clone() }).ok()?;
        let ll = total_log_likelihood(&fit.gmm, &test) / test.nrows() as f64;
        if !ll.is_finite() {
            return None;
        }
        total += ll;
    }
    Some(total / plan.k as f64)
}
