//! Factorized axial attention for neural PDE surrogates.
//!
//! Every layer carries a hand-written backward pass; gradients are checked
//! against central finite differences in the test suite.

pub mod analysis;
pub mod attention;
mod binio;
pub mod counters;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;

#[cfg(test)]
mod testing;

pub use error::{Error, Result};
