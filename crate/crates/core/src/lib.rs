//! Numerical exterior calculus for SU(3)-structures on six-manifolds.

pub mod calculus;
pub mod error;
pub mod exterior;
pub mod stable;
pub mod torus;
pub mod ts3;

pub use error::{Error, ParseError, Result};
