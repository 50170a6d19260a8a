//! Variance estimation under Stein's loss for linear regression with
//! spherically symmetric errors: shrinkage estimators, quadrature for the
//! beta-type integrals they need, Monte Carlo risk, and numerical oracles.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod estimators;
pub mod harness;
pub mod moments;
pub mod oracle;
pub mod quadrature;
pub mod rng;
pub mod sampling;
pub mod stats;
pub mod verify;
