// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod models;
pub mod network;
pub mod pipeline;
pub mod scenario;
pub mod sue;
pub mod train;

pub use error::{Error, Result};
pub use network::{Network, OdMatrix, Topology};
