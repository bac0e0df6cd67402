// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cavity;
pub mod config;
pub mod dynamics;
pub mod envelope;
pub mod error;
pub mod estimation;
pub mod grid;
pub mod histogram;
pub mod io;
mod lm;
pub mod pipeline;
pub mod reconstruction;
pub mod synthesis;

pub use error::{Error, Result};
