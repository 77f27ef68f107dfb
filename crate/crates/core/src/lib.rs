//! Feasibility-aware counterfactual explanations for tabular classifiers.
//!
//! The crate trains a class-conditioned variational generator of
//! counterfactuals against a frozen classifier and offers three ways to make
//! its outputs feasible: a causal proximity loss driven by a (partial)
//! structural causal model, explicit unary and monotonic constraint
//! penalties, and fine-tuning from binary feasibility labels.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod classifier;
pub mod data;
pub mod error;
pub mod feasibility;
pub mod metrics;
pub mod nn;
pub mod oracle;
pub mod pipeline;
pub mod rng;
pub mod scm;
pub mod vae;

pub use error::{Error, Result};
