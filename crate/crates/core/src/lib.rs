//! Online binary classification with paid stochastic experts.
//!
//! A learner pays each of `K` experts an amount from a finite grid every
//! round; an expert's advice is correct with a probability that depends on
//! what it was paid. The learner's cost is its mistake plus `λ` times the
//! total payment. This crate provides:
//!
//! * [`policy::Gaptron`], the confidence-bound aggregating learner, with three
//!   payment optimizers in [`optimizers`];
//! * [`baseline::Lcb`], a bandit baseline that pays and follows one expert;
//! * exact oracles in [`oracle`] (mistake probabilities, the best fixed
//!   payment vector);
//! * an experiment harness in [`harness`] and numerical self-checks in
//!   [`verify`].

// `!(x >= 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod env;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod optimizers;
pub mod oracle;
pub mod policy;
pub mod verify;

pub use error::{Error, Result};
