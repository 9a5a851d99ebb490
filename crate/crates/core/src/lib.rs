//! Dynamic concave valuations of cumulative cash balances on finite
//! scenario trees.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod dual;
pub mod families;
pub mod io;
pub mod market;
pub mod optim;
pub mod risksharing;
pub mod tree;
pub mod valuation;

pub use error::{Error, Result};
