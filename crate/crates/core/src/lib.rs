//! Three-outcome hypothesis tests for partially identifiable causal queries.

pub mod advisor;
pub mod cli;
pub mod error;
pub mod io;
pub mod procedures;
pub mod sampling;
pub mod sim;
pub mod stats;
pub mod ternary;

pub use error::{Error, Result};
