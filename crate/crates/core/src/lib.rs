#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod constants;
pub mod environment;
pub mod error;
pub mod kernels;
pub mod limits;
pub mod paths;
pub mod polymer;
pub mod quad;
pub mod rng;
pub mod statlab;
pub mod suite;

pub use error::{Error, Result};
