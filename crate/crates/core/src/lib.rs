//! Knowledge infusion from a multi-channel ("rich") time-series classifier
//! into a low-channel ("poor") one.
//!
//! The crate is `no_std` + `alloc`; file formats, the CLI and parallel
//! experiment scheduling live in the `cheer` companion crate.

#![cfg_attr(not(feature = "std"), no_std)]
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod baselines;
pub mod data;
pub mod error;
pub mod experiment;
pub mod infusion;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod theory;
pub mod train;

pub use error::{Error, Result};
