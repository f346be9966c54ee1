//! Batch experiment runner: TOML configs in, JSON reports and CSV files out.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN.

pub mod compare;
pub mod config;
pub mod error;
pub mod experiments;
pub mod presets;
pub mod report;

pub use error::{CliError, Result};
