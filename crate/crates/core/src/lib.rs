// `!(a <= b)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bandit;
pub mod cem;
pub mod curriculum;
pub mod envs;
pub mod error;
pub mod geometry;
pub mod innerloop;
pub mod orchestrator;
pub mod qmodel;

pub use error::{Error, Result};
