use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::constraints::{FeasibleRegion, LinearInequality, QuadraticInequality};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{jacobi_eigen, serde_rows, serde_vec, symmetrize};

/// Affine map `z = W diag(1/s) (x - m)` from the original feature space to a
/// `k`-dimensional latent space. `W` has orthonormal rows; `s` is present only
/// when features were z-scored before the projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    #[serde(with = "serde_rows")]
    pub projection: DMatrix<f64>,
    #[serde(with = "serde_vec")]
    pub center: DVector<f64>,
    #[serde(with = "serde_rows")]
    pub reconstruction: DMatrix<f64>,
    #[serde(default)]
    pub scale: Option<Vec<f64>>,
    /// Eigenvalues of the kept components, descending.
    #[serde(default)]
    pub explained_variance: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PcaOptions {
    /// Z-score each feature before fitting.
    pub standardize: bool,
}

impl AffineMap {
    pub fn identity(d: usize) -> Self {
        Self {
            projection: DMatrix::identity(d, d),
            center: DVector::zeros(d),
            reconstruction: DMatrix::identity(d, d),
            scale: None,
            explained_variance: Vec::new(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.projection.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.projection.nrows()
    }

    /// Effective linear part `M` of `z = M (x - m)`.
    pub fn linear_part(&self) -> DMatrix<f64> {
        match &self.scale {
            None => self.projection.clone(),
            Some(s) => {
                let mut m = self.projection.clone();
                for (j, sj) in s.iter().enumerate() {
                    m.column_mut(j).scale_mut(1.0 / sj);
                }
                m
            }
        }
    }

    pub fn transform(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.input_dim(), x.len())?;
        let mut centered = x - &self.center;
        if let Some(s) = &self.scale {
            for (c, sj) in centered.iter_mut().zip(s) {
                *c /= sj;
            }
        }
        Ok(&self.projection * centered)
    }

    pub fn inverse(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.output_dim(), z.len())?;
        let mut x = &self.reconstruction * z;
        if let Some(s) = &self.scale {
            for (c, sj) in x.iter_mut().zip(s) {
                *c *= sj;
            }
        }
        Ok(x + &self.center)
    }

    /// Applies the map to every row.
    pub fn transform_matrix(&self, rows: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.input_dim(), rows.ncols())?;
        let lin = self.linear_part();
        let mut centered = rows.clone();
        for mut r in centered.row_iter_mut() {
            r -= self.center.transpose();
        }
        Ok(centered * lin.transpose())
    }

    pub fn transform_dataset(&self, ds: &LabeledDataset) -> Result<LabeledDataset> {
        let z = self.transform_matrix(ds.features())?;
        let names = (0..self.output_dim()).map(|i| format!("pc{}", i + 1)).collect();
        ds.with_features(z, names)
    }
}

pub fn fit_pca(ds: &LabeledDataset, components: usize) -> Result<AffineMap> {
    fit_pca_with(ds, components, PcaOptions::default())
}

/// Principal components of the sample covariance, via cyclic Jacobi.
pub fn fit_pca_with(ds: &LabeledDataset, components: usize, opts: PcaOptions) -> Result<AffineMap> {
    let (n, d) = (ds.n_samples(), ds.n_features());
    if components == 0 || components > d {
        return Err(Error::Argument(format!(
            "component count must be in 1..={d}, got {components}"
        )));
    }
    if n < 2 {
        return Err(Error::Argument("PCA needs at least two samples".into()));
    }
    let x = ds.features();
    let mean = DVector::from_iterator(d, x.column_iter().map(|c| c.mean()));
    let mut centered = x.clone();
    for mut r in centered.row_iter_mut() {
        r -= mean.transpose();
    }
    let scale = if opts.standardize {
        let s: Vec<f64> = centered
            .column_iter()
            .map(|c| {
                let sd = (c.norm_squared() / (n - 1) as f64).sqrt();
                if sd > 0.0 { sd } else { 1.0 }
            })
            .collect();
        for (j, sj) in s.iter().enumerate() {
            centered.column_mut(j).scale_mut(1.0 / sj);
        }
        Some(s)
    } else {
        None
    };
    let mut cov = centered.transpose() * &centered / (n - 1) as f64;
    symmetrize(&mut cov);
    let eig = jacobi_eigen(&cov);

    let mut order: Vec<usize> = (0..d).collect();
    // stable: equal eigenvalues keep the solver's ordering
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut projection = DMatrix::zeros(components, d);
    for (row, &col) in order.iter().take(components).enumerate() {
        let mut v = eig.eigenvectors.column(col).into_owned();
        let mut pivot = 0;
        for j in 1..d {
            if v[j].abs() > v[pivot].abs() {
                pivot = j;
            }
        }
        if v[pivot] < 0.0 {
            v.neg_mut();
        }
        projection.set_row(row, &v.transpose());
    }
    let explained_variance = order
        .iter()
        .take(components)
        .map(|&c| eig.eigenvalues[c])
        .collect();
    Ok(AffineMap {
        reconstruction: projection.transpose(),
        projection,
        center: mean,
        scale,
        explained_variance,
    })
}

/// Rewrites constraints on latent coordinates `z = M (x - m)` as constraints on `x`.
pub fn pca_compose_constraints(map: &AffineMap, latent: &FeasibleRegion) -> Result<FeasibleRegion> {
    let lin = map.linear_part();
    let shift = &lin * &map.center;
    let linear = latent
        .linear
        .iter()
        .map(|c| {
            check_dim(map.output_dim(), c.dim())?;
            let a = lin.tr_mul(&c.a);
            let b = c.b + a.dot(&map.center);
            Ok(LinearInequality::new(a, b))
        })
        .collect::<Result<Vec<_>>>()?;
    let quadratic = match &latent.quadratic {
        None => None,
        Some(q) => {
            check_dim(map.output_dim(), q.dim())?;
            // z = M x - c with c = M m
            let qm = &q.quad * &lin;
            let mut quad = lin.tr_mul(&qm);
            symmetrize(&mut quad);
            let q_shift = &q.quad * &shift;
            let linear_term = lin.tr_mul(&(&q.lin - q_shift * 2.0));
            let constant = q.constant + shift.dot(&(&q.quad * &shift)) - q.lin.dot(&shift);
            Some(QuadraticInequality::new(quad, linear_term, constant))
        }
    };
    Ok(FeasibleRegion::new(linear, quadratic))
}
