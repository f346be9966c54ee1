//! Velocity-jump chemotaxis simulation: the fine process with internal state,
//! the direct-gradient-sensing process, their drift-diffusion limit and the
//! random walks that connect them.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN.

pub mod coarse;
pub mod ensemble;
pub mod error;
pub mod fine;
pub mod inversion;
pub mod limits;
pub mod model;
pub mod rng;
pub mod stats;
pub mod tau;
pub mod walks;

pub use error::{Error, Result};
