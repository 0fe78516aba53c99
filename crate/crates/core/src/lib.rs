//! Dual filtering for finite hidden Markov models.
//!
//! The crate computes exact filters and next-token predictions, the
//! nonlinear-predictor representation of any function of past tokens, the
//! dual control system whose optimal solution reproduces the filter, the
//! fixed-point map built from that system, and a toy decoder-only attention
//! stack for comparison. Everything is exact enumeration over the prefix
//! tree; nothing here is meant for large models.
#![no_std]

extern crate alloc;

pub mod adapted;
pub mod attention;
pub mod dual;
pub mod error;
pub mod fixed_point;
pub mod hmm;
pub mod linalg;
pub mod oracle;
pub mod predictor;
pub mod sample;

pub use error::{Error, Result};
