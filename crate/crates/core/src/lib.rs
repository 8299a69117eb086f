//! Risk-aware RAN slice scaling: a network QoS model, traffic sources, the
//! slice-scaling environment, learning agents and the experiment harness.

// `!(x >= 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agents;
pub mod env;
pub mod error;
pub mod harness;
pub mod network_model;
pub mod traffic;

pub use error::{Error, Result};
