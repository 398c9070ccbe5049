use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{Error, Result};

/// Assignment of every sample to one of `k` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: Vec<usize>,
    /// False when some class had fewer than `k` members and the split fell back
    /// to a plain shuffle.
    pub stratified: bool,
}

impl FoldPlan {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != fold)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

/// Seeded k-fold split, stratified by class whenever every class has at least
/// `k` members.
pub fn kfold_split(ds: &LabeledDataset, k: usize, seed: u64) -> Result<FoldPlan> {
    split_labels(ds.labels(), ds.n_classes(), k, seed)
}

pub(crate) fn split_labels(labels: &[usize], n_classes: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    let n = labels.len();
    if k < 2 {
        return Err(Error::Argument(format!("fold count must be >= 2, got {k}")));
    }
    if k > n {
        return Err(Error::Argument(format!(
            "fold count {k} exceeds sample count {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0usize; n_classes];
    for &l in labels {
        counts[l] += 1;
    }
    let stratified = counts.iter().all(|&c| c == 0 || c >= k);

    // Round-robin over a (class-grouped) shuffled order keeps global fold sizes
    // within one of each other and spreads each class evenly.
    let order: Vec<usize> = if stratified {
        let mut order = Vec::with_capacity(n);
        for class in 0..n_classes {
            let mut members: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
            members.shuffle(&mut rng);
            order.extend(members);
        }
        order
    } else {
        log::warn!("some class has fewer than {k} members; using an unstratified split");
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        order
    };
    let mut assignments = vec![0; n];
    for (pos, &idx) in order.iter().enumerate() {
        assignments[idx] = pos % k;
    }
    Ok(FoldPlan {
        k,
        assignments,
        stratified,
    })
}
