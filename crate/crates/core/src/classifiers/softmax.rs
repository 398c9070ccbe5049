use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{LinearRegion, RegionProvenance};
use crate::constraints::LinearInequality;
use crate::datamodel::LabeledDataset;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{log_sum_exp, serde_rows, serde_vec};

/// Multinomial logistic regression: `score_k(x) = w_k^T x + b_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxModel {
    /// `K x d`
    #[serde(with = "serde_rows")]
    pub weights: DMatrix<f64>,
    #[serde(with = "serde_vec")]
    pub biases: DVector<f64>,
}

impl SoftmaxModel {
    pub fn zeros(n_classes: usize, n_features: usize) -> Self {
        Self {
            weights: DMatrix::zeros(n_classes, n_features),
            biases: DVector::zeros(n_classes),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.weights.ncols()
    }

    pub fn scores(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.n_features(), x.len())?;
        Ok(&self.weights * x + &self.biases)
    }

    /// Arg-max class, lowest id on ties.
    pub fn predict(&self, x: &DVector<f64>) -> Result<usize> {
        let s = self.scores(x)?;
        let mut best = 0;
        for k in 1..s.len() {
            if s[k] > s[best] {
                best = k;
            }
        }
        Ok(best)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SoftmaxOptions {
    pub lr: f64,
    pub epochs: usize,
    pub l2: f64,
    /// Weights start at zero and training is full-batch, so the seed only
    /// matters for reproducibility bookkeeping.
    pub seed: u64,
    /// Train on z-scored features and fold the scaling back into the weights.
    pub standardize: bool,
}

impl Default for SoftmaxOptions {
    fn default() -> Self {
        Self {
            lr: 0.1,
            epochs: 2000,
            l2: 1e-4,
            seed: 0,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SoftmaxFit {
    pub model: SoftmaxModel,
    pub final_loss: f64,
}

/// Mean cross-entropy plus `l2 * ||W||^2 / 2`, and its gradient with respect to
/// `(W, b)`.
pub fn softmax_loss_and_gradient(
    model: &SoftmaxModel,
    features: &DMatrix<f64>,
    labels: &[usize],
    l2: f64,
) -> (f64, DMatrix<f64>, DVector<f64>) {
    let n = features.nrows();
    let k = model.n_classes();
    let mut grad_w = DMatrix::zeros(k, model.n_features());
    let mut grad_b = DVector::zeros(k);
    let mut loss = 0.0;
    let logits = features * model.weights.transpose();
    for i in 0..n {
        let row: Vec<f64> = (0..k).map(|c| logits[(i, c)] + model.biases[c]).collect();
        let lse = log_sum_exp(&row);
        loss += lse - row[labels[i]];
        for c in 0..k {
            let p = (row[c] - lse).exp() - f64::from(u8::from(c == labels[i]));
            grad_b[c] += p;
            for j in 0..features.ncols() {
                grad_w[(c, j)] += p * features[(i, j)];
            }
        }
    }
    let inv_n = 1.0 / n as f64;
    loss = loss * inv_n + 0.5 * l2 * model.weights.norm_squared();
    grad_w *= inv_n;
    grad_w += &model.weights * l2;
    grad_b *= inv_n;
    (loss, grad_w, grad_b)
}

/// Full-batch gradient descent on the regularised cross-entropy.
pub fn fit_softmax(ds: &LabeledDataset, opts: &SoftmaxOptions) -> Result<SoftmaxFit> {
    let k = ds.n_classes();
    if k < 2 {
        return Err(Error::Argument("softmax regression needs at least two classes".into()));
    }
    let d = ds.n_features();
    let x = ds.features();
    let (mean, sd) = if opts.standardize {
        let mean = DVector::from_iterator(d, x.column_iter().map(|c| c.mean()));
        let sd = DVector::from_iterator(
            d,
            x.column_iter().zip(mean.iter()).map(|(c, m)| {
                let v = c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / c.len() as f64;
                if v > 0.0 { v.sqrt() } else { 1.0 }
            }),
        );
        (mean, sd)
    } else {
        (DVector::zeros(d), DVector::from_element(d, 1.0))
    };
    let mut xs = x.clone();
    for mut r in xs.row_iter_mut() {
        for j in 0..d {
            r[j] = (r[j] - mean[j]) / sd[j];
        }
    }
    let mut model = SoftmaxModel::zeros(k, d);
    let mut loss = softmax_loss_and_gradient(&model, &xs, ds.labels(), opts.l2).0;
    for epoch in 0..opts.epochs {
        let (l, gw, gb) = softmax_loss_and_gradient(&model, &xs, ds.labels(), opts.l2);
        if !l.is_finite() {
            return Err(Error::TrainingDiverged { epoch, loss: l });
        }
        model.weights -= gw * opts.lr;
        model.biases -= gb * opts.lr;
        loss = l;
    }
    let final_loss = softmax_loss_and_gradient(&model, &xs, ds.labels(), opts.l2).0;
    if !final_loss.is_finite() || model.weights.iter().any(|v| !v.is_finite()) {
        return Err(Error::TrainingDiverged {
            epoch: opts.epochs,
            loss: if final_loss.is_finite() { loss } else { final_loss },
        });
    }
    // map back: w^T (x - m)/s + b  =  (w/s)^T x + (b - (w/s)^T m)
    let mut weights = model.weights.clone();
    for j in 0..d {
        weights.column_mut(j).scale_mut(1.0 / sd[j]);
    }
    let biases = &model.biases - &weights * &mean;
    Ok(SoftmaxFit {
        model: SoftmaxModel { weights, biases },
        final_loss,
    })
}

/// `(w_i - w_c)^T x <= (b_c - b_i) - margin` for every `i != c`.
pub fn softmax_target_region(model: &SoftmaxModel, target: usize, margin: f64) -> LinearRegion {
    let wc = model.weights.row(target);
    let inequalities = (0..model.n_classes())
        .filter(|&i| i != target)
        .map(|i| {
            let a = (model.weights.row(i) - wc).transpose();
            LinearInequality::new(a, model.biases[target] - model.biases[i] - margin)
        })
        .collect();
    LinearRegion {
        inequalities,
        provenance: RegionProvenance::SoftmaxMargin,
    }
}
