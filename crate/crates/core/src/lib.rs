//! Counterfactual explanations constrained to high-density regions of the
//! target class.
//!
//! A Gaussian mixture fitted to the target class is approximated by its
//! largest weighted component. Each component turns the density floor into
//! a convex quadratic constraint, so the search for the closest counterfactual
//! becomes one small convex program per (component, classifier region) pair.
//! The engine solves them all and keeps the closest feasible optimum.

pub mod constraints;
pub mod datamodel;
pub mod density;
pub mod engine;
pub mod error;
pub mod linalg;
pub mod solver;
pub mod classifiers;

pub use constraints::{FeasibleRegion, LinearInequality, QuadraticInequality};
pub use error::{Error, Result};
