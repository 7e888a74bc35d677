//! Cluster-aware instrumental-variables estimation.
//!
//! This crate is `no_std` (it needs `alloc`) and contains the numerical
//! machinery only:
//!
//! - [`lstsq`]: column-pivoted Householder QR least squares.
//! - [`cluster`]: cluster indexing, cluster means and within-cluster centering.
//! - [`iv`]: just-identified two-stage least squares with the cluster-robust
//!   sandwich covariance, and the scalar partialling-out route.
//! - [`estimators`]: the eight strategies `2sls`, `2sfe`, `2sls-x`, `2sfe-x`,
//!   `ols`, `fe`, `ols-x`, `fe-x`.
//! - [`hetero`]: joint covariance of the canonical and fixed-effects
//!   estimators, the cluster-heterogeneity t-test and the cluster bootstrap.
//! - [`diagnostics`]: design moments and efficiency formulas.
//! - [`sim`]: seeded data-generating processes and Monte Carlo summaries.
//!
//! File formats, the command line and parallel drivers live in the
//! `clusteriv` crate.

#![no_std]
// `!(x >= 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod cluster;
pub mod diagnostics;
mod error;
pub mod estimators;
pub mod hetero;
pub mod iv;
pub mod lstsq;
mod matrix;
pub mod num;
pub mod rng;
pub mod sim;

pub use cluster::ClusterIndex;
pub use error::{Error, Result};
pub use estimators::{Dataset, FitOptions, FitResult, Strategy};
pub use hetero::JointHetResult;
pub use matrix::Matrix;
