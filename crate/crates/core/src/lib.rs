//! Simulation and calibration engine for a seamless, randomized Phase I/II
//! dose-finding platform.
//!
//! Safety is handled by a Bayesian two-parameter logistic model on the
//! additional DLE risk over a concurrent control (or its dual-agent
//! extension), efficacy by a sequential point-prior analysis of the Cox
//! partial likelihood with shared controls. The trial engine wires both into a
//! weekly cohort timeline and the batch runner turns replications into
//! operating characteristics.

// `!(x > 0.0)` is how NaN is rejected throughout
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod config;
pub mod efficacy;
pub mod error;
pub mod escalation;
pub mod math;
pub mod outcomes;
pub mod qmc;
pub mod report;
pub mod safety_combo;
pub mod safety_mono;
pub mod scenario;
pub mod trial;

pub use error::{Error, Result};
