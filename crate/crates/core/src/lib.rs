//! Scalar multivariate risk measures with a single eligible (cash) asset on
//! finite scenario trees.
//!
//! The crate computes superhedging prices under proportional and polyhedral
//! convex transaction costs and composed average value at risk, both from
//! acceptance sets (primal linear programs) and from consistent price
//! systems (dual programs), and checks the time-consistency relations that
//! tie them together.

#![allow(clippy::needless_range_loop)]

pub mod error;
pub mod fixtures;
mod holdings;
pub mod io;
pub mod lp;
pub mod market;
pub mod par;
pub mod pricing;
pub mod risk;
pub mod timecheck;
pub mod tree;
pub mod value;

pub use error::{Error, Result};
pub use value::Extended;
