use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{LinearRegion, RegionProvenance};
use crate::constraints::LinearInequality;
use crate::datamodel::LabeledDataset;
use crate::error::{check_dim, Error, Result};

/// Node of a binary decision tree, stored in preorder. Samples with
/// `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        class: usize,
        /// Ordinal of this leaf in preorder.
        leaf_id: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeModel {
    pub nodes: Vec<TreeNode>,
    pub n_features: usize,
    pub n_classes: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TreeOptions {
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for TreeOptions {
    fn default() -> Self {
        Self {
            max_depth: 5,
            min_leaf: 1,
        }
    }
}

impl TreeModel {
    /// A single leaf that always predicts `class`.
    pub fn constant(class: usize, n_features: usize, n_classes: usize) -> Self {
        Self {
            nodes: vec![TreeNode::Leaf { class, leaf_id: 0 }],
            n_features,
            n_classes,
        }
    }

    pub fn predict(&self, x: &DVector<f64>) -> Result<usize> {
        self.leaf_of(x).map(|(class, _)| class)
    }

    /// `(class, leaf_id)` of the leaf reached by `x`.
    pub fn leaf_of(&self, x: &DVector<f64>) -> Result<(usize, usize)> {
        check_dim(self.n_features, x.len())?;
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                TreeNode::Leaf { class, leaf_id } => return Ok((*class, *leaf_id)),
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Leaf { .. }))
            .count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], at: usize) -> usize {
            match &nodes[at] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

fn gini(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / t).powi(2)).sum::<f64>()
}

fn majority(counts: &[usize]) -> usize {
    let mut best = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = c;
        }
    }
    best
}

struct Builder<'a> {
    ds: &'a LabeledDataset,
    opts: TreeOptions,
    nodes: Vec<TreeNode>,
    leaves: usize,
}

impl Builder<'_> {
    fn counts(&self, idx: &[usize]) -> Vec<usize> {
        let mut c = vec![0; self.ds.n_classes()];
        for &i in idx {
            c[self.ds.labels()[i]] += 1;
        }
        c
    }

    /// Best `(feature, threshold, weighted impurity)`; ties keep the first
    /// feature and the lowest threshold.
    fn best_split(&self, idx: &[usize]) -> Option<(usize, f64)> {
        let x = self.ds.features();
        let labels = self.ds.labels();
        let k = self.ds.n_classes();
        let n = idx.len();
        let total = self.counts(idx);
        let mut best: Option<(usize, f64, f64)> = None;
        let mut sorted = idx.to_vec();
        for f in 0..self.ds.n_features() {
            sorted.sort_by(|&a, &b| x[(a, f)].total_cmp(&x[(b, f)]).then(a.cmp(&b)));
            let mut left = vec![0; k];
            for pos in 0..n - 1 {
                left[labels[sorted[pos]]] += 1;
                let (lo, hi) = (x[(sorted[pos], f)], x[(sorted[pos + 1], f)]);
                let n_left = pos + 1;
                if lo == hi || n_left < self.opts.min_leaf || n - n_left < self.opts.min_leaf {
                    continue;
                }
                let right: Vec<usize> = total.iter().zip(&left).map(|(t, l)| t - l).collect();
                let score = (n_left as f64 * gini(&left, n_left)
                    + (n - n_left) as f64 * gini(&right, n - n_left))
                    / n as f64;
                if best.is_none_or(|(_, _, b)| score < b) {
                    let mut t = 0.5 * (lo + hi);
                    if t >= hi {
                        t = lo;
                    }
                    best = Some((f, t, score));
                }
            }
        }
        best.map(|(f, t, _)| (f, t))
    }

    fn build(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let counts = self.counts(&idx);
        let at = self.nodes.len();
        let pure = gini(&counts, idx.len()) <= 0.0;
        let split = if pure || depth >= self.opts.max_depth || idx.len() < 2 * self.opts.min_leaf {
            None
        } else {
            self.best_split(&idx)
        };
        match split {
            None => {
                self.nodes.push(TreeNode::Leaf {
                    class: majority(&counts),
                    leaf_id: self.leaves,
                });
                self.leaves += 1;
            }
            Some((feature, threshold)) => {
                self.nodes.push(TreeNode::Split {
                    feature,
                    threshold,
                    left: 0,
                    right: 0,
                });
                let x = self.ds.features();
                let (l, r): (Vec<usize>, Vec<usize>) =
                    idx.into_iter().partition(|&i| x[(i, feature)] <= threshold);
                let left = self.build(l, depth + 1);
                let right = self.build(r, depth + 1);
                self.nodes[at] = TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                };
            }
        }
        at
    }
}

/// Greedy CART with Gini impurity and midpoint thresholds.
pub fn fit_tree(ds: &LabeledDataset, opts: &TreeOptions) -> Result<TreeModel> {
    if opts.max_depth < 1 || opts.min_leaf < 1 {
        return Err(Error::Argument("max_depth and min_leaf must be >= 1".into()));
    }
    let mut b = Builder {
        ds,
        opts: *opts,
        nodes: Vec::new(),
        leaves: 0,
    };
    b.build((0..ds.n_samples()).collect(), 0);
    Ok(TreeModel {
        nodes: b.nodes,
        n_features: ds.n_features(),
        n_classes: ds.n_classes(),
    })
}

/// One box per leaf labelled `target`. Right-branch bounds `x_f > t` become
/// `x_f >= t + margin`; only the tightest bound per feature and side is kept.
pub fn tree_target_regions(model: &TreeModel, target: usize, margin: f64) -> Vec<LinearRegion> {
    let d = model.n_features;
    let mut out = Vec::new();
    let mut upper = vec![f64::INFINITY; d];
    let mut lower = vec![f64::NEG_INFINITY; d];
    walk(model, 0, target, margin, &mut upper, &mut lower, &mut out);
    out
}

fn walk(
    model: &TreeModel,
    at: usize,
    target: usize,
    margin: f64,
    upper: &mut [f64],
    lower: &mut [f64],
    out: &mut Vec<LinearRegion>,
) {
    match &model.nodes[at] {
        TreeNode::Leaf { class, leaf_id } => {
            if *class != target {
                return;
            }
            let d = model.n_features;
            let mut inequalities = Vec::new();
            for f in 0..d {
                if upper[f].is_finite() {
                    let mut a = DVector::zeros(d);
                    a[f] = 1.0;
                    inequalities.push(LinearInequality::new(a, upper[f]));
                }
                if lower[f].is_finite() {
                    let mut a = DVector::zeros(d);
                    a[f] = -1.0;
                    inequalities.push(LinearInequality::new(a, -lower[f]));
                }
            }
            out.push(LinearRegion {
                inequalities,
                provenance: RegionProvenance::Leaf(*leaf_id),
            });
        }
        TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        } => {
            let f = *feature;
            let saved = upper[f];
            upper[f] = upper[f].min(*threshold);
            walk(model, *left, target, margin, upper, lower, out);
            upper[f] = saved;
            let saved = lower[f];
            lower[f] = lower[f].max(threshold + margin);
            walk(model, *right, target, margin, upper, lower, out);
            lower[f] = saved;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ds(rows: &[&[f64]], labels: &[usize]) -> LabeledDataset {
        let d = rows[0].len();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        LabeledDataset::new(
            DMatrix::from_row_slice(rows.len(), d, &flat),
            labels.to_vec(),
            (0..d).map(|i| format!("f{i}")).collect(),
        )
        .unwrap()
    }

    /// Every candidate midpoint scored by hand-rolled Gini, independent of the builder.
    fn brute_force_stump(xs: &[f64], ys: &[usize]) -> f64 {
        let mut vals = xs.to_vec();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        let mut best = (f64::INFINITY, 0.0);
        for w in vals.windows(2) {
            let t = 0.5 * (w[0] + w[1]);
            let side = |left: bool| -> (f64, f64) {
                let members: Vec<usize> = xs
                    .iter()
                    .zip(ys)
                    .filter(|(x, _)| (**x <= t) == left)
                    .map(|(_, y)| *y)
                    .collect();
                let n = members.len() as f64;
                let p1 = members.iter().filter(|&&y| y == 1).count() as f64 / n;
                (n, 1.0 - p1 * p1 - (1.0 - p1) * (1.0 - p1))
            };
            let ((nl, gl), (nr, gr)) = (side(true), side(false));
            let score = (nl * gl + nr * gr) / (nl + nr);
            if score < best.0 {
                best = (score, t);
            }
        }
        best.1
    }

    #[test]
    fn single_split_matches_enumeration() {
        let data = ds(&[&[1.0], &[2.0], &[8.0], &[9.0]], &[0, 0, 1, 1]);
        let tree = fit_tree(&data, &TreeOptions::default()).unwrap();
        assert_eq!(tree.n_leaves(), 2);
        let TreeNode::Split { threshold, .. } = tree.nodes[0] else { panic!("expected split") };
        assert_eq!(threshold, brute_force_stump(&[1.0, 2.0, 8.0, 9.0], &[0, 0, 1, 1]));
        assert_eq!(threshold, 5.0);
        for i in 0..4 {
            assert_eq!(tree.predict(&data.sample(i)).unwrap(), data.labels()[i]);
        }
    }

    #[test]
    fn pure_data_is_one_leaf() {
        let data = ds(&[&[1.0], &[2.0], &[3.0]], &[1, 1, 1]);
        let tree = fit_tree(&data, &TreeOptions::default()).unwrap();
        assert_eq!(tree.nodes.len(), 1);
    }

    #[test]
    fn min_leaf_equal_to_n_forbids_splits() {
        let data = ds(&[&[1.0], &[2.0], &[8.0], &[9.0]], &[0, 0, 1, 1]);
        let tree = fit_tree(&data, &TreeOptions { max_depth: 5, min_leaf: 4 }).unwrap();
        assert_eq!(tree.n_leaves(), 1);
    }

    #[test]
    fn stump_region() {
        let tree = TreeModel {
            nodes: vec![
                TreeNode::Split { feature: 0, threshold: 2.0, left: 1, right: 2 },
                TreeNode::Leaf { class: 0, leaf_id: 0 },
                TreeNode::Leaf { class: 1, leaf_id: 1 },
            ],
            n_features: 1,
            n_classes: 2,
        };
        let regions = tree_target_regions(&tree, 1, 1e-4);
        assert_eq!(regions.len(), 1);
        assert_eq!(regions[0].provenance, RegionProvenance::Leaf(1));
        assert_eq!(regions[0].inequalities[0].a.as_slice(), &[-1.0]);
        assert_eq!(regions[0].inequalities[0].b, -(2.0 + 1e-4));
        assert!(tree_target_regions(&tree, 5, 1e-4).is_empty());
    }

    #[test]
    fn regions_are_sound_and_match_leaves() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..120)
            .map(|_| vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)])
            .collect();
        let labels: Vec<usize> = rows
            .iter()
            .map(|r| usize::from(r[0] > 0.5) + usize::from(r[1] > -1.0 && r[0] < 1.5))
            .collect();
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let data = ds(&refs, &labels);
        let tree = fit_tree(&data, &TreeOptions { max_depth: 2, min_leaf: 1 }).unwrap();
        assert!(tree.depth() <= 2);
        let all: Vec<(usize, LinearRegion)> = (0..3)
            .flat_map(|t| tree_target_regions(&tree, t, 0.0).into_iter().map(move |r| (t, r)))
            .collect();
        for _ in 0..2000 {
            let x = DVector::from_fn(2, |_, _| rng.random_range(-4.0..4.0));
            let (class, leaf) = tree.leaf_of(&x).unwrap();
            let hits: Vec<&(usize, LinearRegion)> = all.iter().filter(|(_, r)| r.contains(&x, 0.0)).collect();
            if hits.len() == 1 {
                assert_eq!(hits[0].0, class);
                assert_eq!(hits[0].1.provenance, RegionProvenance::Leaf(leaf));
            }
            for t in 0..3 {
                for r in tree_target_regions(&tree, t, 1e-4) {
                    if r.contains(&x, 0.0) {
                        assert_eq!(class, t);
                    }
                }
            }
        }
    }

    #[test]
    fn json_preorder_layout() {
        let tree = TreeModel::constant(2, 3, 4);
        let json = serde_json::to_string(&tree).unwrap();
        assert_eq!(json, r#"{"nodes":[{"node":"leaf","class":2,"leaf_id":0}],"n_features":3,"n_classes":4}"#);
    }
}
