//! Daily NO2 estimation from monitor interpolation and road traffic exposure.

// `!(x > 0.0)` style checks are meant to reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod artifacts;
pub mod config;
pub mod error;
pub mod fit;
pub mod geom;
pub mod ingest;
pub mod interp;
pub mod pipeline;
pub mod predict;
pub mod synth;
pub mod traffic;
pub mod validate;

pub use error::{Error, Result};
