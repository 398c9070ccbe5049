//! Classifiers whose target-class decision sets are unions of polyhedra.

mod softmax;
mod tree;

pub use softmax::{
    fit_softmax, softmax_loss_and_gradient, softmax_target_region, SoftmaxFit, SoftmaxModel,
    SoftmaxOptions,
};
pub use tree::{fit_tree, tree_target_regions, TreeModel, TreeNode, TreeOptions};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::constraints::{FeasibleRegion, LinearInequality};
use crate::error::Result;

/// Where a linear region came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegionProvenance {
    SoftmaxMargin,
    Leaf(usize),
}

/// Conjunction of `a^T x <= b` inequalities; empty means the whole space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRegion {
    pub inequalities: Vec<LinearInequality>,
    pub provenance: RegionProvenance,
}

impl LinearRegion {
    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        self.inequalities.iter().all(|c| c.value(x) <= tol)
    }

    pub fn to_feasible_region(&self) -> FeasibleRegion {
        FeasibleRegion::new(self.inequalities.clone(), None)
    }
}

/// A trained model of either supported family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Classifier {
    Softmax(SoftmaxModel),
    Tree(TreeModel),
}

impl Classifier {
    pub fn predict(&self, x: &DVector<f64>) -> Result<usize> {
        match self {
            Classifier::Softmax(m) => m.predict(x),
            Classifier::Tree(m) => m.predict(x),
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            Classifier::Softmax(m) => m.n_features(),
            Classifier::Tree(m) => m.n_features,
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            Classifier::Softmax(m) => m.n_classes(),
            Classifier::Tree(m) => m.n_classes,
        }
    }

    /// Polyhedral pieces of the set predicted as `target`, each shrunk by `margin`
    /// so that every point satisfying them is classified as `target`.
    pub fn target_regions(&self, target: usize, margin: f64) -> Vec<LinearRegion> {
        match self {
            Classifier::Softmax(m) => vec![softmax_target_region(m, target, margin)],
            Classifier::Tree(m) => tree_target_regions(m, target, margin),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Classifier::Softmax(_) => "softmax",
            Classifier::Tree(_) => "tree",
        }
    }
}
