//! Numerical certification of stability and convergence rates for
//! discrete-time dynamical systems.
//!
//! The crate covers the constructive side of discrete Lyapunov theory:
//!
//! - [`dynsys`]: systems, trajectories, transition matrices, decay envelopes.
//! - [`stein`]: spectral classification and Stein (discrete Lyapunov) solvers.
//! - [`certcheck`]: sampled verification of Lyapunov hypotheses.
//! - [`converse`]: converse Lyapunov functions built from trajectory sums.
//! - [`linearize`]: Jacobians, the indirect method and certified basins.
//! - [`averaging`]: averaged fields, error budgets and averaged Lyapunov functions.
//! - [`timescales`]: composite certificates for slow/fast systems.
//! - [`frontend`]: expression language, JSON configs, commands and reports.
//!
//! Every check over a continuum is performed on samples. A passing report is
//! sampled evidence, not a proof.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod averaging;
pub mod certcheck;
pub mod converse;
pub mod dynsys;
mod error;
pub mod frontend;
pub mod linalg;
pub mod linearize;
mod par;
pub mod rng;
pub mod stein;
pub mod timescales;

pub use error::{Error, Result};

/// Column vector used throughout the crate.
pub type Vector = nalgebra::DVector<f64>;
/// Dense matrix used throughout the crate.
pub type Matrix = nalgebra::DMatrix<f64>;
