#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod fusion;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
#[doc(hidden)]
pub mod testkit;
pub mod trainer;

pub use error::{Error, Result};
