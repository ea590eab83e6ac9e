//! Deterministic simulator for federated averaging under cyclic client
//! participation.
//!
//! Clients are split into `K̄` disjoint groups that become available to the
//! server in a fixed cyclic order. Each communication round the server samples
//! `N` clients from the available group without replacement, the clients run a
//! local procedure (one GD step, `τ` local SGD steps, or one shuffled pass over
//! `B` components), and the server averages the returned models.
//!
//! The crate is organised around the objects needed to check the convergence
//! theory of that scheme on objectives whose constants are known exactly:
//!
//! - [`quadratic`]: quadratic client populations with exact smoothness, PL and
//!   heterogeneity constants.
//! - [`datasets`]: Gaussian-mixture data, Dirichlet label partitioning and
//!   regularised multinomial-logistic client objectives.
//! - [`schedule`]: cyclic group traversal, per-round subsampling, component
//!   permutations and hierarchical random streams.
//! - [`engine`]: the federated loop itself plus the step-size prescriptions.
//! - [`analysis`]: cycle decomposition, without-replacement variance,
//!   heterogeneity estimation, cost models and rate fitting.
//! - [`experiments`] and [`verify`]: the standard desk-scale experiment
//!   families and the self-configuring verification suites built on them.

// `!(x > 0.0)` is used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod datasets;
pub mod engine;
mod error;
pub mod experiments;
pub mod population;
pub mod quadratic;
pub mod schedule;
pub mod verify;

pub use error::{Error, Result};
pub use population::Population;

/// Dense column vector used for models and gradients.
pub type Vector = nalgebra::DVector<f64>;
/// Dense matrix used for Hessians and feature tables.
pub type Matrix = nalgebra::DMatrix<f64>;
