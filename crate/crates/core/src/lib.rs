//! Torque-level locomotion learning for a simulated quadruped.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod checkpoint;
pub mod env;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod physics;
pub mod ppo;
pub mod telemetry;
pub mod terrain;
pub mod train;
pub mod validate;

pub use error::{Error, Result};
