//! Distributed primal-dual interior-point solver for relaxed consensus
//! optimization.

// `!(a > b)` is used on purpose so that NaN inputs are rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod formats;
pub mod linalg;
pub mod model;
pub mod msgpass;
pub mod oracle;
pub mod pdipm;
pub mod reformulations;
pub mod verify;

pub use error::{Error, Result};
