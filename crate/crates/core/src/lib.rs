//! Variational assimilation of Lagrangian float positions into a periodic
//! primitive-equations ocean model.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assim;
pub mod cli;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod floats;
pub mod grid;
pub mod sample;
pub mod snapshot;
pub mod tlm;
pub mod twin;
pub mod verify;

pub use error::{Error, Result};
