//! Experiment harness around `npg_core`: TOML configs, seeded instance files,
//! CSV traces and the acceptance suite.

// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod config;
pub mod error;
pub mod experiments;
pub mod instance_io;

pub use error::{HarnessError, Result};
