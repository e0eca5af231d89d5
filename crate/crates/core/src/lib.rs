//! Metriplectic systems: brackets, Lie-algebra tools, discrete gradients and
//! a structure-preserving integrator.

pub mod brackets;
pub mod cli;
pub mod dgrad;
pub mod error;
pub mod fields;
pub mod harness;
pub mod integrate;
pub mod liealg;
pub mod linalg;
pub mod sampling;

pub use error::{Error, Result};
