//! Deterministic desk-scale simulator for federated optimization.
//!
//! Three server algorithms are provided: FedSGD, FedAvg written as a step
//! along a biased gradient, and FedMom (Nesterov-style momentum applied on
//! the server to the aggregated client update). Alongside them live the
//! estimators and checks used to test convergence claims empirically:
//! smoothness and variance estimates, step-size admissibility, theoretical
//! bound evaluation, the inner-product direction diagnostic and the
//! auxiliary-sequence identity of the momentum method.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clients;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod models;
pub mod params;
pub mod rng;
pub mod server;

pub use error::{Error, Result};
pub use params::ParamVector;
