//! Simulator of a hub-and-spoke polarization entanglement-swapping network
//! together with a streaming time-tag analysis engine.
//!
//! The physics layers ([`polarization`], [`source`], [`fiber`], [`bsm`],
//! [`detector`]) feed the discrete-event [`engine`], whose tag streams are
//! consumed by [`analysis`] and [`chsh`].

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod bsm;
pub mod chsh;
pub mod cli;
pub mod detector;
pub mod engine;
pub mod error;
pub mod fiber;
pub mod io;
pub mod polarization;
pub mod rng;
pub mod source;

pub use error::{Error, Result};
