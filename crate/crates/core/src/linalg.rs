//! Small dense linear-algebra helpers shared by the estimators and the solver.

use nalgebra::{DMatrix, DVector};

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns `(eigenvalues, eigenvectors)` with eigenvectors stored as columns,
/// in the order the rotations leave them (unsorted).
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
    pub sweeps: usize,
}

pub const JACOBI_TOL: f64 = 1e-10;
pub const JACOBI_MAX_SWEEPS: usize = 100;

fn off_diagonal_norm(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

pub fn jacobi_eigen(matrix: &DMatrix<f64>) -> SymmetricEigen {
    assert!(matrix.is_square(), "jacobi_eigen needs a square matrix");
    let n = matrix.nrows();
    let mut a = matrix.clone();
    // symmetrize so rounding asymmetry in the input cannot stall convergence
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = m;
            a[(j, i)] = m;
        }
    }
    let mut v = DMatrix::<f64>::identity(n, n);
    let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
    let mut sweeps = 0;
    while sweeps < JACOBI_MAX_SWEEPS && off_diagonal_norm(&a) > JACOBI_TOL * scale {
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    SymmetricEigen {
        eigenvalues: a.diagonal(),
        eigenvectors: v,
        sweeps,
    }
}

/// Cholesky factorisation with an escalating diagonal shift.
///
/// Tries the matrix as given, then with `reg * scale * I` where `reg` grows by
/// 100x per attempt. Returns `None` if every attempt fails.
pub(crate) fn regularized_cholesky(
    matrix: &DMatrix<f64>,
    initial_reg: f64,
) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if let Some(ch) = matrix.clone().cholesky() {
        return Some(ch);
    }
    let n = matrix.nrows();
    let scale = (0..n).fold(0.0f64, |m, i| m.max(matrix[(i, i)].abs())).max(1.0);
    let mut reg = initial_reg;
    for _ in 0..6 {
        let mut shifted = matrix.clone();
        for i in 0..n {
            shifted[(i, i)] += reg * scale;
        }
        if let Some(ch) = shifted.cholesky() {
            return Some(ch);
        }
        reg *= 100.0;
    }
    None
}

/// `(x - mu)^T P (x - mu)`
pub(crate) fn quad_form(precision: &DMatrix<f64>, x: &DVector<f64>, mu: &DVector<f64>) -> f64 {
    let diff = x - mu;
    diff.dot(&(precision * &diff))
}

/// Numerically stable `log(sum(exp(values)))`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Serde adapters that write matrices as row-major nested arrays.
pub mod serde_rows {
    use nalgebra::DMatrix;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = (0..m.nrows())
            .map(|i| m.row(i).iter().copied().collect())
            .collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        from_rows(&rows).map_err(D::Error::custom)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err("ragged matrix rows".into());
        }
        Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
    }
}

/// Serde adapter for vectors as plain arrays.
pub mod serde_vec {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        let v: Vec<f64> = Vec::deserialize(d)?;
        Ok(DVector::from_vec(v))
    }
}

/// Like [`serde_vec`] for optional vectors; `None` becomes `null`.
pub mod serde_opt_vec {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<DVector<f64>>, s: S) -> Result<S::Ok, S::Error> {
        v.as_ref().map(|v| v.as_slice()).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DVector<f64>>, D::Error> {
        let v: Option<Vec<f64>> = Option::deserialize(d)?;
        Ok(v.map(DVector::from_vec))
    }
}
