use nalgebra::DVector;

use super::ConvexProgram;
use crate::error::{Error, Result};

/// Best feasible grid point, or `None` if no grid point is feasible.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub point: DVector<f64>,
    pub value: f64,
}

/// Exhaustive scan of a regular grid with `resolution` intervals per axis
/// over the box `[lower, upper]`. Meant for tests on `d <= 3`.
pub fn brute_force_oracle(
    program: &ConvexProgram,
    lower: &[f64],
    upper: &[f64],
    resolution: usize,
) -> Result<Option<OracleResult>> {
    let d = program.dim();
    if d > 3 {
        return Err(Error::Argument(format!("grid oracle supports d <= 3, got {d}")));
    }
    if lower.len() != d || upper.len() != d || resolution == 0 {
        return Err(Error::Argument("grid box must match the program dimension".into()));
    }
    let steps = resolution + 1;
    let total = steps.pow(d as u32);
    let mut best: Option<OracleResult> = None;
    let mut x = DVector::zeros(d);
    for flat in 0..total {
        let mut rem = flat;
        for k in 0..d {
            let i = rem % steps;
            rem /= steps;
            x[k] = lower[k] + (upper[k] - lower[k]) * i as f64 / resolution as f64;
        }
        if program.max_violation(&x) > 0.0 {
            continue;
        }
        let value = program.objective.value(&x);
        if best.as_ref().is_none_or(|b| value < b.value) {
            best = Some(OracleResult {
                point: x.clone(),
                value,
            });
        }
    }
    Ok(best)
}
