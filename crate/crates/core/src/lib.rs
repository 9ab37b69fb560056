//! Sparse Bayesian-network structure learning for discrete data.
//!
//! The crate fits a directed acyclic graph over categorical variables by
//! minimizing a group-penalized multi-logit negative log-likelihood with a
//! block-coordinate, variance-reduced stochastic gradient method. Each
//! candidate parent contributes one coefficient block per child; group
//! soft-thresholding drives whole blocks to zero, and the surviving blocks
//! define the learned edge set.
//!
//! Module layout:
//! - [`graph`]: directed graphs, reachability, topological order, and
//!   synthetic DAG generators (bipartite, scale-free, uniform random).
//! - [`model`]: variable cardinalities, dummy coding, the multi-logit
//!   conditional model, ground-truth parameter synthesis, ancestral
//!   sampling, and noise injection.
//! - [`score`]: log-likelihood, group penalties, the combined score, and
//!   analytic plus finite-difference gradients.
//! - [`optim`]: proximal operators, the variance-reduced block epoch, the
//!   full learning loop, edge extraction, and cycle repair.
//! - [`metrics`]: structure-recovery metrics against a ground-truth DAG.

pub mod graph;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod score;
