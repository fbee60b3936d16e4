//! Monte Carlo simulation of monitor-qubit feedforward against drifting
//! magnetic fields in a trapped-ion register.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod error;
pub mod experiment;
pub mod noise;
pub mod physics;
pub mod protocol;
pub mod servo;

pub use error::{Error, Result};
