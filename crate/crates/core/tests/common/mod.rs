//! Fixtures shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

pub mod oracles;
pub mod physics;
pub mod reward;
