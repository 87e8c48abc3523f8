//! Continuous-time LPV identification of SOC-dependent battery
//! equivalent-circuit parameters and the OCV-SOC curve from sampled
//! current and voltage.
//!
//! The pipeline models `a1`, `b0`, `b1`, `voc` and `a1*voc` of the
//! input-output battery model as cubic B-splines in SOC, estimates
//! filtered time derivatives with a state variable filter, and solves two
//! L1-regularized least-squares problems whose penalties sparsify the jumps
//! of the splines' third derivatives.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod bspline;
pub mod config;
pub mod ecm_sim;
pub mod error;
pub mod identify;
pub mod io;
pub mod metrics;
pub mod regression;
pub mod solver;
pub mod svf;

pub use error::{Error, Result};
